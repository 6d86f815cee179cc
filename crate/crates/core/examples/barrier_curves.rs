//! Tabulates the log-barrier extension for several values of `t` next to
//! the quadratic penalty, and writes the curves as an SVG chart.
//!
//! ```text
//! cargo run --example barrier_curves -- [out.svg]
//! ```

use std::fmt::Write as _;

use boxseg::barrier::{psi_tilde_derivative, psi_tilde_value, quadratic_penalty_value, BarrierSchedule};

const TS: [f64; 4] = [1.0, 5.0, 25.0, 100.0];

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "barrier_curves.svg".into());

    print!("{:>7}", "z");
    for t in TS {
        print!("  {:>13}", format!("psi_{t}"));
    }
    println!("  {:>13}", "penalty");
    for k in 0..=12 {
        let z = -2.0 + k as f64 * 0.25;
        print!("{z:>7.2}");
        for t in TS {
            print!("  {:>13.5}", psi_tilde_value(z, t));
        }
        println!("  {:>13.5}", quadratic_penalty_value(z, 1.0));
    }

    println!("\nslope at z = -1 and z = -0.01 (barrier keeps pushing satisfied constraints):");
    for t in TS {
        println!(
            "  t = {t:>5}: {:>10.4} {:>10.4}",
            psi_tilde_derivative(-1.0, t),
            psi_tilde_derivative(-0.01, t)
        );
    }

    let schedule = BarrierSchedule::default();
    let ts: Vec<String> = [0, 2, 4, 6, 8, 60].iter().map(|&e| format!("{e}:{:.2}", schedule.t_at(e))).collect();
    println!("\ndefault schedule (epoch:t) {}", ts.join(" "));

    std::fs::write(&out, chart())?;
    println!("wrote {out}");
    Ok(())
}

type Curve = Box<dyn Fn(f64) -> f64>;

fn chart() -> String {
    let (w, h) = (560.0, 360.0);
    let (x0, x1, y0, y1) = (-2.0, 1.0, -1.0, 4.0);
    let px = |x: f64| 40.0 + (w - 60.0) * (x - x0) / (x1 - x0);
    let py = |y: f64| 20.0 + (h - 50.0) * (1.0 - (y.clamp(y0, y1) - y0) / (y1 - y0));
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#7f7f7f"];
    let mut s = format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    s.push_str(r#"<rect width="100%" height="100%" fill="white"/>"#);
    write!(s, r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, px(x0), py(0.0), px(x1), py(0.0)).unwrap();
    write!(s, r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, px(0.0), py(y0), px(0.0), py(y1)).unwrap();
    let curves: Vec<(String, Curve)> = TS
        .iter()
        .map(|&t| (format!("t = {t}"), Box::new(move |z| psi_tilde_value(z, t)) as Curve))
        .chain(std::iter::once(("max(0, z)^2".to_string(), Box::new(|z| quadratic_penalty_value(z, 1.0)) as Curve)))
        .collect();
    for (i, (name, f)) in curves.iter().enumerate() {
        let pts: Vec<String> = (0..=300)
            .map(|k| x0 + (x1 - x0) * k as f64 / 300.0)
            .map(|z| format!("{:.1},{:.1}", px(z), py(f(z))))
            .collect();
        write!(s, r#"<polyline fill="none" stroke="{}" stroke-width="2" points="{}"/>"#, colors[i], pts.join(" ")).unwrap();
        write!(s, r#"<text x="60" y="{}" fill="{}">{name}</text>"#, 30.0 + 16.0 * i as f64, colors[i]).unwrap();
    }
    s.push_str("</svg>\n");
    s
}
