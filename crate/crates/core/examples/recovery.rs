//! Simulates a 10 x 30 Model 2 panel, fits it and prints the posterior
//! summary, the worst R-hat and the Bayesian p-value.
//!
//! `cargo run --release --example recovery -- [warmup] [seed]`

use std::time::Instant;

use stgp::data::{simulate, SimConfig};
use stgp::eval::{bayesian_pvalue, ppc_draws};
use stgp::model::{fit, ModelSpec};
use stgp::obs::ObsFamily;
use stgp::sampler::{render_summary, summarize, SamplerConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let warm: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(500);
    let seed: u64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1);
    let spec = ModelSpec::preset("model2").unwrap();
    let truth = [6.0, 0.6, 1.5, 0.5, 0.3];
    let kernel = spec.kernel_layout().with_constrained(&spec.kernel, &truth).unwrap();
    let sim = simulate(&SimConfig {
        n_locations: 10,
        n_weeks: 30,
        lon_range: (-3.0, 0.0),
        lat_range: (51.0, 54.0),
        population_range: (5e4, 5e5),
        base_rate: 1e-4,
        kernel,
        family: ObsFamily::NegBinomial { phi: 0.1 },
        seed,
    })
    .unwrap();
    let t = Instant::now();
    let cfg = SamplerConfig {
        warmup: warm,
        n_samples: warm,
        seed,
        ..Default::default()
    };
    let fitted = fit(&spec, &sim.data, &cfg).unwrap();
    println!("fit {:?}", t.elapsed());
    for s in &fitted.samples.stats {
        println!("{s:?}");
    }
    let rows = summarize(&fitted.samples, false).unwrap();
    print!("{}", render_summary(&rows));
    let lat = summarize(&fitted.samples, true).unwrap();
    let worst = lat.iter().map(|r| r.rhat).fold(0.0, f64::max);
    println!("max rhat all {worst}");
    let (y, d) = ppc_draws(&fitted, 1000).unwrap();
    println!("p {}", bayesian_pvalue(&y, &d, 0).unwrap().p);
}
