use asmlab::controller::ComplianceGains;
use asmlab::env::{AssemblyEnv, EnvBuilder, MdpState};
use asmlab::geometry::CrossSection;
use asmlab::plant::PlantParams;
use asmlab::reconfig::{reconfigure_gains, shape_scales, tuned_gains, GainTuning, StiffnessProbe, TaskGeometry};
use asmlab::rl::{actor_forward, train, AgentCheckpoint, DdpgHyper, EpisodeStat, Precision};
use asmlab::transfer::{transfer_train, SimilarityConfig, TransferConfig, TransferMethod};

// c9 environment: noise-free, default caps/feed (dip regime).
fn c9_env(section: CrossSection, depth: f64, gains: ComplianceGains) -> AssemblyEnv {
    let params = PlantParams::new(section, 0.1, depth, 2e9, 0.2).unwrap();
    let mut b = EnvBuilder::new(params, gains);
    b.episode.max_steps = 100;
    b.episode.lateral_error = 0.45e-3;
    b.episode.angular_error = 4e-3;
    b.reward.h_f = 0.2;
    b.build().unwrap()
}

// noisy variant for the bad source
fn noisy_env(section: CrossSection, depth: f64, gains: ComplianceGains) -> AssemblyEnv {
    let mut e = c9_env(section, depth, gains);
    e.episode_config_mut().wrench_noise_force = 0.05;
    e.episode_config_mut().wrench_noise_moment = 3e-3;
    e
}

fn scaled(g: &ComplianceGains, f: f64) -> ComplianceGains {
    let mut k = g.as_array();
    for v in k.iter_mut().take(5) { *v *= f; }
    ComplianceGains::new(k).unwrap()
}

fn final_reward(curve: &[EpisodeStat]) -> f64 {
    let tail = &curve[curve.len() - 15..];
    let mut v: Vec<f64> = tail.iter().map(|e| e.avg_reward).collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

fn e2t(curve: &[EpisodeStat], thr: f64) -> usize {
    for i in 9..curve.len() {
        let mut w: Vec<f64> = curve[i - 9..=i].iter().map(|e| e.avg_reward).collect();
        w.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if w[5] >= thr { return i; }
    }
    curve.len()
}

fn main() {
    let probe = StiffnessProbe::default();
    let tuning = GainTuning::default(); // feed 0.4mm default
    let hyper = DdpgHyper {
        warmup_episodes: 10, noise_sigma: 0.4, noise_sigma_min: 0.05,
        noise_decay_episodes: 100, precision: Precision::F32, ..Default::default()
    };
    let pent = |n: &str| CrossSection::regular_polygon(n, 5, 7.14, 0.0).unwrap();
    let cub = CrossSection::rectangle("cub", 15.0, 15.0).unwrap();
    let cyl = CrossSection::circle("cyl", 7.5).unwrap();
    let gains_of = |sec: &CrossSection, depth: f64| {
        let p = PlantParams::new(sec.clone(), 0.1, depth, 2e9, 0.2).unwrap();
        (tuned_gains(&p, &probe, &tuning).unwrap(), shape_scales(&p, &probe).unwrap())
    };

    let (cub_gains, cub_scales) = gains_of(&cub, 0.02);
    let (cyl_gains, _) = gains_of(&cyl, 0.02);
    let (p30_gains, _) = gains_of(&pent("p30"), 0.03);
    let (_, p20_scales) = gains_of(&pent("p20"), 0.02);
    let g_cub = TaskGeometry::from_section(cub.clone(), 0.02);
    let g_p20 = TaskGeometry::from_section(pent("p20"), 0.02);
    let p20_gains = reconfigure_gains(&cub_gains, &g_cub, &cub_scales, &g_p20, &p20_scales);

    let src_p30 = train(&mut c9_env(pent("p30"), 0.03, p30_gains), 200, &hyper, 1003).unwrap();
    let src_cub = train(&mut c9_env(cub.clone(), 0.02, cub_gains), 200, &hyper, 1001).unwrap();
    // Bad source: cylinder on its noisy, x4-mistuned variant.
    let src_bad = train(&mut noisy_env(cyl.clone(), 0.02, scaled(&cyl_gains, 4.0)), 200, &hyper, 1002).unwrap();
    eprintln!("p30 {:.2} cub {:.2} bad {:.2}",
        final_reward(&src_p30.curve), final_reward(&src_cub.curve), final_reward(&src_bad.curve));

    // What does the bad actor output on typical target states?
    let mut env_probe = c9_env(pent("p20"), 0.02, p20_gains);
    let mut states: Vec<MdpState> = vec![];
    for seed in 0..5 {
        let mut s = env_probe.reset(seed + 300).unwrap();
        for _ in 0..20 {
            let r = env_probe.step(&asmlab::controller::RevisionFactors::ZERO).unwrap();
            s = r.state;
            states.push(s);
            if r.done { break; }
        }
    }
    let bad_actor = src_bad.checkpoint.actor_f64();
    let good_actor = src_p30.checkpoint.actor_f64();
    let mean_a = |actor: &asmlab::rl::Mlp<f64>| -> Vec<f64> {
        let mut acc = [0.0; 6];
        for s in &states {
            let a = actor_forward(actor, s);
            for i in 0..6 { acc[i] += a.0[i]; }
        }
        acc.iter().map(|v| v / states.len() as f64).collect()
    };
    eprintln!("bad actor mean a on target states:  {:?}", mean_a(&bad_actor).iter().map(|v| (v*100.0) as i64).collect::<Vec<_>>());
    eprintln!("good actor mean a on target states: {:?}", mean_a(&good_actor).iter().map(|v| (v*100.0) as i64).collect::<Vec<_>>());

    let sources: Vec<AgentCheckpoint> = vec![src_bad.checkpoint, src_cub.checkpoint, src_p30.checkpoint];
    let thr = -1.35;
    for method in [TransferMethod::Direct, TransferMethod::Wdpd, TransferMethod::MostSimilarOnly,
                   TransferMethod::LeastSimilarOnly, TransferMethod::Equal] {
        let mut e2ts = vec![]; let mut finals = vec![];
        for seed in [11u64, 22, 33, 44, 55] {
            let cfg = TransferConfig {
                similarity: SimilarityConfig { sampling_times: 8, horizon: 60, ..Default::default() },
                method, ..Default::default()
            };
            let mut env = c9_env(pent("p20"), 0.02, p20_gains);
            let (out, rep) = transfer_train(&mut env, &sources, 160, &hyper, &cfg, seed, "p20").unwrap();
            e2ts.push(e2t(&out.curve, thr));
            finals.push(final_reward(&out.curve));
            if seed == 11 {
                if let Some(r) = rep {
                    eprintln!("  sims {:?}", r.sim.iter().map(|x| x.iter().sum::<f64>() as i64).collect::<Vec<_>>());
                    eprintln!("  w% {:?}", r.weights.iter().map(|row| row.map(|v| (v * 100.0) as i64)).collect::<Vec<_>>());
                }
                let blocks: Vec<String> = out.curve.chunks(25).map(|c| format!("{:.2}", c.iter().map(|e| e.avg_reward).sum::<f64>() / c.len() as f64)).collect();
                eprintln!("  {method:?} blocks {:?}", blocks);
            }
        }
        e2ts.sort(); finals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        eprintln!("{method:?}: e2t {:?} med {} | finals med {:.3}", e2ts, e2ts[2], finals[2]);
    }
}
