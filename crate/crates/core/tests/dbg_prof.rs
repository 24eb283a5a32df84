use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;
use varcs_core::estimator::GdConfig;
use varcs_core::selector::SelectionConfig;
use varcs_core::simulator::{make_varl_cs_dgp, simulate, DgpKind, DgpSpec, NoiseSpec};

#[test]
fn profile_tensor_pipeline() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let spec = DgpSpec {
        kind: DgpKind::VarlCs, p: 30, lag: 5, rank: 3, ranks: (3,3,3),
        common_dim: 2, sv_range: (0.8, 1.5), noise: NoiseSpec::ScaledIdentity(1.0), burn_in: 200,
    };
    let truth = make_varl_cs_dgp(&spec, &mut rng).unwrap();
    let panel = simulate(&truth.tensor.frontal_slices(), 800, &spec.noise, 200, &mut rng).unwrap();
    let cfg = SelectionConfig {
        r_bars: (10, 10, 5),
        gd: GdConfig { step_size: 0.05, max_iters: 500, ..Default::default() },
        ..Default::default()
    };
    let t0 = Instant::now();
    let (ranks, _, _) = varcs_core::selector::select_ranks_varl(&panel, 5, &cfg).unwrap();
    eprintln!("select_ranks: {:?} -> {ranks:?}", t0.elapsed());
    let (y, x) = panel.design(5).unwrap();
    let t1 = Instant::now();
    let rc = varcs_core::initializer::rank_constrained_varl_design(&y, &x, 5, ranks).unwrap();
    eprintln!("rc at hats: {:?}", t1.elapsed());
    for d in 0..=3usize {
        let t2 = Instant::now();
        let init = varcs_core::initializer::spectral_init_varl(&rc, d, 1.0).unwrap();
        let t3 = Instant::now();
        let fit = varcs_core::estimator::fit_varl_design(&y, &x, ranks, d, &init, &cfg.gd).unwrap();
        eprintln!("d={d}: init {:?} fit {:?} iters {} converged {}", t3 - t2.elapsed() + (t3 - t2), t3.elapsed(), fit.iterations_used, fit.converged);
    }
}
