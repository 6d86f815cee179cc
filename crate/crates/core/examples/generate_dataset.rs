//! Generates a synthetic dataset, writes it to disk, reloads it and prints
//! a few samples as ASCII art with their boxes.
//!
//! ```text
//! cargo run --example generate_dataset -- [out_dir] [ellipse|two_lobe] [margin]
//! ```

use boxseg::synthdata::{self, DatasetConfig, Sample, ShapeFamily};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().unwrap_or_else(|| "synthetic".into());
    let shape = match args.next().as_deref() {
        None | Some("ellipse") => ShapeFamily::Ellipse,
        Some("two_lobe") => ShapeFamily::TwoLobe,
        Some(other) => return Err(format!("unknown shape `{other}`").into()),
    };
    let margin: usize = args.next().map(|a| a.parse()).transpose()?.unwrap_or(0);

    let cfg = DatasetConfig {
        shape,
        margin,
        ..DatasetConfig::default()
    };
    let data = synthdata::generate(&cfg)?;
    synthdata::save(&data, dir.as_ref())?;
    let back = synthdata::load(dir.as_ref())?;
    println!(
        "wrote {} train + {} val samples to {dir} (reloaded {} + {})",
        data.train.len(),
        data.val.len(),
        back.train.len(),
        back.val.len()
    );

    let fill: Vec<f64> = back
        .train
        .iter()
        .map(|s| s.mask.count() as f64 / s.bbox.area() as f64)
        .collect();
    let mean = fill.iter().sum::<f64>() / fill.len() as f64;
    let min = fill.iter().copied().fold(f64::INFINITY, f64::min);
    println!("foreground fraction of the box: mean {mean:.3}, min {min:.3}");

    for s in back.train.iter().take(2) {
        show(s);
    }
    Ok(())
}

/// `#` foreground, `+` background inside the box, `.` outside; every other
/// row and column.
fn show(s: &Sample) {
    println!("\n{} box {:?}", s.id, s.bbox);
    for r in (0..s.height()).step_by(2) {
        let line: String = (0..s.width())
            .step_by(2)
            .map(|c| match (s.mask.get(r, c), s.bbox.contains(r, c)) {
                (true, _) => '#',
                (false, true) => '+',
                (false, false) => '.',
            })
            .collect();
        println!("{line}");
    }
}
