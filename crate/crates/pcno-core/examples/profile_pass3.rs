use pcno_core::data::read_dataset;
use pcno_core::geometry::DensityMode;
use pcno_core::model::{model_forward, prepare_sample, ModelConfig, ModelParams, ParamVars, Precision};
use pcno_core::tensor::Tape;
use pcno_core::train::relative_l2_on_tape;
use std::time::Instant;

fn main() {
    let (_, bundles) = read_dataset(std::path::Path::new("/tmp/adv300"), Some(&[0])).unwrap();
    let b = &bundles[0];
    let cfg = ModelConfig { d: 1, d_prime: 1, d_a: 3, d_u: 1, width: 32, proj_width: 32, n_layers: 4, k_max: 16, n_subdomains: 1, density_mode: DensityMode::Uniform, precision: Precision::Real64 };
    let mut params = ModelParams::init(cfg.clone(), 1).unwrap();
    params.set_length_scales(&[15.0]);
    let prep = prepare_sample(&cfg, &b.sample, b.features.as_ref().unwrap(), b.grad_weights.as_ref().unwrap()).unwrap();
    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, &params);
    let t0 = Instant::now();
    let pred = model_forward(&mut tape, &vars, &params, &prep).unwrap();
    let l = relative_l2_on_tape(&mut tape, pred, prep.reference.as_ref().unwrap(), &prep.mask, prep.ref_norm, 0).unwrap();
    println!("forward: {:.1} ms", t0.elapsed().as_secs_f64()*1e3);
    let t0 = Instant::now();
    let stats = tape.backward_profiled(l).unwrap();
    println!("backward: {:.1} ms", t0.elapsed().as_secs_f64()*1e3);
    for (name, secs, count) in stats {
        println!("  {:<16} {:>8.2} ms  x{}", name, secs*1e3, count);
    }
}
