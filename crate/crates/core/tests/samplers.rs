use ldas::data::frequency_matrix;
use ldas::dynamic_sampler::{run_dynamic, DynamicConfig, StepSchedule, DEFAULT_S0, DEFAULT_V0};
use ldas::posterior::summarize;
use ldas::selection::scree;
use ldas::simulate::{
    draw_anchored_truth, even_split, simulate_dynamic, simulate_static, simulate_with_path, static_config,
    stream_for, ChainSettings, Design, DesignSpec,
};
use ldas::static_sampler::{default_priors, run_gibbs};
use ldas::RngStream;
use rayon::prelude::*;

#[test]
fn single_period_dynamic_matches_static() {
    let spec = DesignSpec { groups: 1, questions: 3, categories: 4, k: 2 };
    let truth = draw_anchored_truth(spec, &mut RngStream::new(31, 0)).unwrap();
    let data = simulate_with_path(&truth, &[1500], &mut RngStream::new(31, 1)).unwrap();
    let static_data = simulate_static(&truth, &[1500], &mut RngStream::new(31, 1)).unwrap();

    let chain = ChainSettings { iterations: 3000, burn_in: 1000, thin: 5 };
    let s = run_gibbs(&static_data, &static_config(&static_data, 2, chain), &mut RngStream::new(31, 2)).unwrap();
    let p = default_priors(&data, 2);
    let cfg = DynamicConfig {
        k: 2,
        eta: p.eta,
        v0: DEFAULT_V0,
        s0: DEFAULT_S0,
        schedule: StepSchedule::default(),
        iterations: 3000,
        burn_in: 1000,
        thin: 5,
        batch_size: None,
    };
    let d = run_dynamic(&data, &cfg, &mut RngStream::new(31, 3)).unwrap();
    let (bs, bd) = (summarize(&s).unwrap().beta_mean, summarize(&d.draws).unwrap().beta_mean);
    let worst = bs
        .iter()
        .flatten()
        .flatten()
        .zip(bd.iter().flatten().flatten())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 0.03, "largest beta difference {worst}");
}

#[test]
fn anchoring_puts_argmax_on_diagonal() {
    let spec = Design::Identified.spec();
    let chain = ChainSettings { iterations: 800, burn_in: 300, thin: 5 };
    let hits: usize = (0..20)
        .into_par_iter()
        .map(|rep| {
            let truth = draw_anchored_truth(spec, &mut RngStream::new(41, stream_for(rep, 0, 0))).unwrap();
            let data =
                simulate_static(&truth, &even_split(2000, spec.groups), &mut RngStream::new(41, stream_for(rep, 0, 1)))
                    .unwrap();
            let draws =
                run_gibbs(&data, &static_config(&data, spec.k, chain), &mut RngStream::new(41, stream_for(rep, 0, 2)))
                    .unwrap();
            let beta = &summarize(&draws).unwrap().beta_mean[0];
            let ok = (0..spec.k).all(|k| {
                let row = &beta[k];
                (0..row.len()).all(|v| row[v] <= row[k])
            });
            usize::from(ok)
        })
        .sum();
    assert!(hits >= 19, "diagonal argmax in {hits}/20 replications");
}

#[test]
fn scree_separates_the_true_rank() {
    // the mixture weights vary by group, so Y has rank K up to sampling noise
    let spec = Design::Identified.spec();
    let truth = draw_anchored_truth(spec, &mut RngStream::new(51, 0)).unwrap();
    let data = simulate_static(&truth, &even_split(100_000, spec.groups), &mut RngStream::new(51, 1)).unwrap();
    let ev = scree(&frequency_matrix(&data));
    let gap = ev[spec.k - 1] / ev[spec.k];
    assert!(gap >= 5.0, "eigenvalues {ev:?}");
}

#[test]
fn simulated_datasets_are_consistent() {
    let spec = DesignSpec { groups: 3, questions: 4, categories: 3, k: 2 };
    let truth = draw_anchored_truth(spec, &mut RngStream::new(61, 0)).unwrap();
    let data = simulate_static(&truth, &[100, 200, 300], &mut RngStream::new(61, 1)).unwrap();
    assert_eq!(data.group_sizes(), vec![100, 200, 300]);
    let freq = frequency_matrix(&data);
    for (g, row) in freq.counts().iter().enumerate() {
        assert_eq!(row.iter().sum::<u64>(), (data.group_sizes()[g] * spec.questions) as u64);
    }
    assert!(data.rows().all(|r| r.iter().all(|&x| (x as usize) < spec.categories)));

    let (dyn_data, path) = simulate_dynamic(&truth, &[50; 6], &[0.1, 0.1], &mut RngStream::new(61, 2)).unwrap();
    assert_eq!(dyn_data.n_labels(), 6);
    assert_eq!(path.pi_tilde.len(), 6);
    for row in &path.params.pi {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }
}

#[test]
fn same_seed_same_draws() {
    let spec = DesignSpec { groups: 2, questions: 3, categories: 3, k: 2 };
    let truth = draw_anchored_truth(spec, &mut RngStream::new(71, 0)).unwrap();
    let data = simulate_static(&truth, &[200, 200], &mut RngStream::new(71, 1)).unwrap();
    let cfg = static_config(&data, 2, ChainSettings { iterations: 200, burn_in: 50, thin: 3 });
    let a = run_gibbs(&data, &cfg, &mut RngStream::new(9, 0)).unwrap();
    let b = run_gibbs(&data, &cfg, &mut RngStream::new(9, 0)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), (200 - 50) / 3);
    for snap in &a.snapshots {
        snap.state.check(1e-10).unwrap();
    }
}
