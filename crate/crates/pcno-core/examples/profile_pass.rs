use pcno_core::data::read_dataset;
use pcno_core::fourier;
use pcno_core::geometry::DensityMode;
use pcno_core::model::{prepare_sample, ModelConfig, ModelParams, Precision};
use pcno_core::tensor::{Tape, Tensor};
use std::time::Instant;

fn main() {
    let (_, bundles) = read_dataset(std::path::Path::new("/tmp/adv300"), Some(&[0])).unwrap();
    let b = &bundles[0];
    let n = b.sample.n_nodes;
    println!("sample n = {n}");
    let cfg = ModelConfig { d: 1, d_prime: 1, d_a: 3, d_u: 1, width: 32, proj_width: 32, n_layers: 4, k_max: 16, n_subdomains: 1, density_mode: DensityMode::Uniform, precision: Precision::Real64 };
    let params = ModelParams::init(cfg.clone(), 1).unwrap();
    let prep = prepare_sample(&cfg, &b.sample, b.features.as_ref().unwrap(), b.grad_weights.as_ref().unwrap()).unwrap();

    let c = 32;
    let f = Tensor::from_vec(vec![n, c], (0..n*c).map(|i| (i as f64 * 0.001).sin()).collect()).unwrap();
    let log_l = Tensor::from_vec(vec![1], vec![15.0f64.ln()]).unwrap();
    let w = params.layers[0].fourier_w.as_ref().clone();

    let time = |label: &str, f: &mut dyn FnMut()| {
        f(); // warm
        let t = Instant::now();
        let reps = 20;
        for _ in 0..reps { f(); }
        println!("{label}: {:.2} ms", t.elapsed().as_secs_f64()*1000.0/reps as f64);
    };

    // analysis alone
    time("analysis", &mut || {
        let mut tape = Tape::new();
        let fv = tape.leaf(f.clone());
        let lv = tape.leaf(log_l.clone());
        let _ = tape.nuft_analysis(fv, lv, prep.ctx.clone()).unwrap();
    });
    // full integral
    time("integral fwd", &mut || {
        let mut tape = Tape::new();
        let fv = tape.leaf(f.clone());
        let lv = tape.leaf(log_l.clone());
        let wv = tape.leaf(w.clone());
        let _ = fourier::integral_apply(&mut tape, wv, lv, &prep.ctx, fv).unwrap();
    });
    // matmul [n,32]x[32,32]
    let wl = params.layers[0].w_local.as_ref().clone();
    time("matmul", &mut || {
        let mut tape = Tape::new();
        let fv = tape.leaf(f.clone());
        let wv = tape.leaf(wl.clone());
        let _ = tape.matmul(fv, wv).unwrap();
    });
    // edge gradient
    time("edge_grad", &mut || {
        let mut tape = Tape::new();
        let fv = tape.leaf(f.clone());
        let _ = tape.edge_gradient(fv, prep.grad_adj.clone()).unwrap();
    });
    // gelu
    time("gelu", &mut || {
        let mut tape = Tape::new();
        let fv = tape.leaf(f.clone());
        let _ = tape.gelu(fv).unwrap();
    });
    // leaf clone overhead
    time("leaf clone", &mut || {
        let mut tape = Tape::new();
        let _ = tape.leaf(f.clone());
    });
}
