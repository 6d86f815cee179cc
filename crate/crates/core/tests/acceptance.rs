//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and a
//! summary. Failing criteria make the process exit non-zero only when
//! `BOXSEG_ACCEPTANCE_STRICT` is set.
//!
//! The training criteria share one set of 60-epoch runs on the default
//! synthetic set: every mode on seeds 0, 1 and 2, plus margin-10 and
//! quadratic-penalty emptiness runs on the same seeds. Expect about an hour
//! on one core.

mod common;

use std::collections::HashMap;
use std::process::ExitCode;
use std::time::Instant;

use boxseg::barrier::{psi_tilde_derivative, psi_tilde_value};
use boxseg::boxprior::{build_segments, BoundingBox, Orientation};
use boxseg::synthdata::{self, Dataset};
use boxseg::trainer::{self, prepare, MetricsRow, Split, TrainConfig, TrainMode};

const SEEDS: [u64; 3] = [0, 1, 2];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn barrier() -> Verdict {
    let mut worst: f64 = 0.0;
    for t in [1.0f64, 5.0, 25.0, 100.0] {
        let z0 = -1.0 / (t * t);
        // each branch of the extension written out at the junction
        let log_value = -(-z0).ln() / t;
        let lin_value = t * z0 - (1.0 / (t * t)).ln() / t + 1.0 / t;
        let log_slope = -1.0 / (t * z0);
        worst = worst.max((log_value - lin_value).abs()).max((log_slope - t).abs());
        worst = worst.max((psi_tilde_value(z0, t) - lin_value).abs());
        worst = worst.max((psi_tilde_derivative(z0, t) - t).abs());
    }
    let refs = psi_tilde_value(-1.0, 1.0) == 0.0 && psi_tilde_value(0.0, 1.0) == 1.0;
    verdict(
        worst < 1e-6 && refs,
        format!("largest branch disagreement {worst:.1e}; psi_1(-1) = {}, psi_1(0) = {}", psi_tilde_value(-1.0, 1.0) + 0.0, psi_tilde_value(0.0, 1.0)),
    )
}

fn gradients() -> Verdict {
    let ops = [common::elementwise_ops(), common::convolution(), common::spatial_ops(), common::barrier_ops()];
    let mut coords = 0;
    for r in &ops {
        match r {
            Ok(n) => coords += n,
            Err(e) => return verdict(false, e.clone()),
        }
    }
    let mut skipped = 0;
    for (mode, penalty, t) in [
        (TrainMode::EmptinessTightnessSize, false, 5.0),
        (TrainMode::MceTightnessSize, false, 1.0),
        (TrainMode::TightnessSizeOnly, false, 2.0),
        (TrainMode::TightnessEmptinessOnly, true, 1.0),
        (TrainMode::FullSupervision, false, 1.0),
    ] {
        match common::objective(mode, penalty, t, 200) {
            Ok(s) => skipped += s,
            Err(e) => return verdict(false, e),
        }
    }
    verdict(
        true,
        format!("{coords} op coordinates within 1e-4; 5 objectives x 200 parameters within 1e-3 ({skipped} kinked coordinates resampled)"),
    )
}

fn segments() -> Verdict {
    let n = 12;
    let mut boxes = 0;
    for w in [1, 2, 3, 5] {
        for top in 0..n {
            for bottom in top + 1..=n {
                for left in 0..n {
                    for right in left + 1..=n {
                        let bbox = BoundingBox::new(top, left, bottom, right);
                        let segs = build_segments(&bbox, w, n).unwrap();
                        for orient in [Orientation::Horizontal, Orientation::Vertical] {
                            let mut hits = vec![0usize; n * n];
                            let mut lines = 0;
                            for s in segs.iter().filter(|s| s.orientation == orient) {
                                lines += s.lines;
                                for &i in &s.indices {
                                    hits[i] += 1;
                                }
                            }
                            let side = match orient {
                                Orientation::Horizontal => bottom - top,
                                Orientation::Vertical => right - left,
                            };
                            let exact = (0..n * n).all(|i| hits[i] == usize::from(bbox.contains(i / n, i % n)));
                            if !exact || lines != side {
                                return verdict(false, format!("{bbox:?} w={w} {orient:?}"));
                            }
                        }
                        boxes += 1;
                    }
                }
            }
        }
    }
    verdict(true, format!("{boxes} box/width pairs partitioned exactly"))
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
enum Run {
    Mode(TrainMode),
    Margin10,
    Penalty,
}

struct Finished {
    val: MetricsRow,
    /// Post-training evaluation over the training set.
    train: MetricsRow,
}

fn train_one(cfg: &TrainConfig, data: &Dataset, label: &str) -> Finished {
    let start = Instant::now();
    let outcome = trainer::train(cfg, data).unwrap_or_else(|e| panic!("{label}: {e}"));
    let t = cfg.schedule.t_at(cfg.epochs.saturating_sub(1));
    let samples = prepare(&data.train, cfg.w).unwrap();
    let train = trainer::evaluate(&outcome.model, &samples, cfg, t, cfg.epochs, Split::Train).unwrap();
    let val = outcome.final_row(Split::Val).unwrap().clone();
    eprintln!(
        "  {label:<40} val dice {:.4}  train tight {:.3} size {:.3}  ({:.0} s)",
        val.dice_mean,
        train.tight_sat_frac,
        train.size_ok,
        start.elapsed().as_secs_f64()
    );
    Finished { val, train }
}

fn main() -> ExitCode {
    let quick = std::env::var_os("BOXSEG_ACCEPTANCE_QUICK").is_some();
    let mut verdicts: Vec<(usize, Verdict)> = Vec::new();
    verdicts.push((1, barrier()));
    verdicts.push((2, gradients()));
    verdicts.push((3, segments()));

    let base = TrainConfig {
        epochs: if quick { 2 } else { 60 },
        ..TrainConfig::default()
    };
    let data = synthdata::generate(&base.dataset).unwrap();
    let loose = data.with_margin(10).unwrap();
    let modes = [
        TrainMode::FullSupervision,
        TrainMode::EmptinessTightnessSize,
        TrainMode::MceTightnessSize,
        TrainMode::TightnessSizeOnly,
    ];
    let mut runs: HashMap<(Run, u64), Finished> = HashMap::new();
    for seed in SEEDS {
        for mode in modes {
            let cfg = TrainConfig { mode, seed, ..base.clone() };
            runs.insert((Run::Mode(mode), seed), train_one(&cfg, &data, &format!("{} seed {seed}", mode.as_str())));
        }
        let cfg = TrainConfig { seed, ..base.clone() };
        runs.insert((Run::Margin10, seed), train_one(&cfg, &loose, &format!("margin 10 seed {seed}")));
        let cfg = TrainConfig {
            seed,
            penalty_mode: true,
            ..base.clone()
        };
        runs.insert((Run::Penalty, seed), train_one(&cfg, &data, &format!("quadratic penalty seed {seed}")));
    }
    let dice = |run: Run, seed: u64| runs[&(run, seed)].val.dice_mean;
    let empt = Run::Mode(TrainMode::EmptinessTightnessSize);
    let mce = Run::Mode(TrainMode::MceTightnessSize);
    let ts = Run::Mode(TrainMode::TightnessSizeOnly);
    let full = Run::Mode(TrainMode::FullSupervision);

    let per_seed = |f: &dyn Fn(u64) -> (bool, String)| -> Verdict {
        let parts: Vec<(bool, String)> = SEEDS.iter().map(|&s| f(s)).collect();
        verdict(
            parts.iter().all(|p| p.0),
            parts.iter().map(|p| p.1.as_str()).collect::<Vec<_>>().join("; "),
        )
    };

    verdicts.push((
        4,
        per_seed(&|s| {
            let (e, m, t) = (dice(empt, s), dice(mce, s), dice(ts, s));
            (e >= m && m >= t && e - t >= 0.05, format!("seed {s}: emptiness {e:.4} mce {m:.4} tightness+size {t:.4}"))
        }),
    ));
    verdicts.push((
        5,
        per_seed(&|s| {
            let (e, f) = (dice(empt, s), dice(full, s));
            (f - e <= 0.05, format!("seed {s}: emptiness {e:.4} full {f:.4} gap {:.4}", f - e))
        }),
    ));
    verdicts.push((
        6,
        per_seed(&|s| {
            let drop = dice(empt, s) - dice(Run::Margin10, s);
            (drop <= 0.12, format!("seed {s}: drop {drop:.4}"))
        }),
    ));
    let default_run = &runs[&(empt, 0)].train;
    verdicts.push((
        7,
        verdict(
            default_run.tight_sat_frac >= 0.95 && default_run.size_ok >= 0.95,
            format!(
                "training set: tightness satisfied {:.4}, size bounds satisfied on {:.4} of samples",
                default_run.tight_sat_frac, default_run.size_ok
            ),
        ),
    ));
    verdicts.push((
        8,
        per_seed(&|s| {
            let (b, p) = (runs[&(empt, s)].train.tight_sat_frac, runs[&(Run::Penalty, s)].train.tight_sat_frac);
            (b >= p, format!("seed {s}: barrier {b:.4} penalty {p:.4}"))
        }),
    ));

    let dir = tempfile::tempdir().unwrap();
    let short = TrainConfig { epochs: 2, ..base.clone() };
    let csv = |name: &str| {
        let cfg = TrainConfig {
            out_dir: dir.path().join(name),
            ..short.clone()
        };
        trainer::run(&cfg, &data).unwrap();
        std::fs::read(cfg.out_dir.join("metrics.csv")).unwrap()
    };
    let (a, b) = (csv("a"), csv("b"));
    verdicts.push((9, verdict(a == b, format!("two 2-epoch runs, {} CSV bytes each, identical: {}", a.len(), a == b))));

    for (n, v) in &verdicts {
        println!("criterion {n}: {} | {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    if quick {
        println!("(quick mode: {} epochs per run, training criteria are not meaningful)", base.epochs);
    }
    let passed = verdicts.iter().filter(|(_, v)| v.pass).count();
    println!("{passed} of {} criteria pass", verdicts.len());
    if passed < verdicts.len() && std::env::var_os("BOXSEG_ACCEPTANCE_STRICT").is_some() {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
