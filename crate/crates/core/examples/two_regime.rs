//! Stationary vs latent-field model on the two-regime generator.
//!
//! `cargo run --example two_regime -- [seeds] [m]`; generator scales can be
//! overridden with `SHORT=lx,lt` and `LONG=lx,lt`, the base family with
//! `FAMILY=ch1|ch2`.

use std::time::Instant;

use nostill::model::{fit_stationary, train_from, warm_start, NostillModel};
use nostill::optimize::TrainConfig;
use nostill::planner::{plan_and_evaluate, PlanningModel};
use nostill::selection::{select_latents, SelectionMethod, SelectionPlan, StationaryKernel};
use nostill::synthetic::{generate, SyntheticConfig};
use nostill::KernelFamily;

fn pair(var: &str) -> Option<(f64, f64)> {
    let v = std::env::var(var).ok()?;
    let (a, b) = v.split_once(',')?;
    Some((a.parse().ok()?, b.parse().ok()?))
}

fn run_seed(gen: &SyntheticConfig, m: usize) -> nostill::Result<(f64, f64, NostillModel)> {
    let data = generate(gen)?;
    let cfg = TrainConfig::new(gen.seed);
    let stat = fit_stationary(&data.train, gen.family, &cfg)?;
    let sk = StationaryKernel::from_model(&stat)?;
    let plan = SelectionPlan::total(SelectionMethod::GreedyEntropy, m);
    let latents = select_latents(&data.train, &plan, Some(&sk), &cfg)?;
    let ns = train_from(&data.train, warm_start(&stat, &latents, false)?, &cfg)?;
    let e = ns.covariance(&data.test.points())?.symmetric_eigenvalues();
    println!("  test covariance eigenvalues [{:.3e}, {:.3e}]", e.min(), e.max());
    let a = plan_and_evaluate(&stat, &data.test, 4, None)?;
    let b = plan_and_evaluate(&ns, &data.test, 4, None)?;
    Ok((a.mean_rms, b.mean_rms, ns))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let args: Vec<String> = std::env::args().collect();
    let seeds: u64 = args.get(1).map_or(Ok(3), |s| s.parse())?;
    let m: usize = args.get(2).map_or(Ok(12), |s| s.parse())?;
    let family: Option<KernelFamily> = std::env::var("FAMILY").ok().map(|s| s.parse()).transpose()?;
    let mut wins = 0;
    for seed in 0..seeds {
        let start = Instant::now();
        let mut gen = SyntheticConfig::two_regime(seed);
        if let Some(s) = pair("SHORT") {
            gen.short_scales = s;
        }
        if let Some(s) = pair("LONG") {
            gen.long_scales = s;
        }
        if let Some(f) = family {
            gen.family = f;
        }
        match run_seed(&gen, m) {
            Ok((stat, ns, model)) => {
                let ratio = ns / stat;
                if ratio <= 0.9 {
                    wins += 1;
                }
                println!(
                    "seed {seed}: stationary {stat:.4} nostill {ns:.4} ratio {ratio:.3} [{:.1}s]",
                    start.elapsed().as_secs_f64()
                );
                let f = model.field();
                let step = (f.len() / 12).max(1);
                let row = |v: &[f64]| {
                    (0..f.len())
                        .step_by(step)
                        .map(|i| format!(" {:.3}", v[i]))
                        .collect::<String>()
                };
                println!("  field lx{}", row(&f.lx));
                println!("  field lt{}", row(&f.lt));
            }
            Err(e) => println!("seed {seed}: failed: {e}"),
        }
    }
    println!("wins {wins}/{seeds}");
    Ok(())
}
