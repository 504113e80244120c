// Temporary calibration probe; deleted before commit.
use clusterreg::pipeline::{run_replicate, EvalOptions, EvalReport};
use clusterreg::simulator::{EffectType, Preset, ScenarioConfig};
use std::time::Instant;

fn med(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n == 0 { return f64::NAN; }
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

fn cell(cfg: &ScenarioConfig, reps: u64, seed: u64, opts: &EvalOptions) -> Vec<EvalReport> {
    (0..reps).map(|r| run_replicate(cfg, seed, r, opts).unwrap()).collect()
}

fn show2(tag: &str, rs: &[EvalReport], t: f64) {
    let n = rs.len() as f64;
    let m = |f: &dyn Fn(&EvalReport) -> Option<f64>| med(rs.iter().filter_map(f).collect());
    let mio_b = m(&|r| r.mio.as_ref().map(|x| x.beta_err));
    let ols_b = m(&|r| r.ols.as_ref().map(|x| x.beta_err));
    let lm_b = m(&|r| r.lmem.as_ref().map(|x| x.beta_err));
    let mio_g = m(&|r| r.mio.as_ref().map(|x| x.gamma_err));
    let lm_g = m(&|r| r.lmem.as_ref().map(|x| x.gamma_err));
    let mio_m = m(&|r| r.mio.as_ref().map(|x| x.test_mse));
    let ols_m = m(&|r| r.ols.as_ref().map(|x| x.test_mse));
    let rid_m = m(&|r| r.ridge.as_ref().map(|x| x.test_mse));
    let lm_m = m(&|r| r.lmem.as_ref().map(|x| x.test_mse));
    let rec = rs.iter().filter_map(|r| r.mio.as_ref().map(|x| x.sparsity_recovery)).sum::<f64>() / n;
    // per-rep sign counts for the direction-gated criteria
    let wins = |f: &dyn Fn(&EvalReport) -> Option<(f64, f64)>| {
        rs.iter().filter_map(f).filter(|(a, b)| a <= b).count()
    };
    let wb = wins(&|r| Some((r.mio.as_ref()?.beta_err, r.lmem.as_ref()?.beta_err)));
    let wg = rs.iter()
        .filter_map(|r| Some((r.mio.as_ref()?.gamma_err, r.lmem.as_ref()?.gamma_err)))
        .filter(|(a, b)| a < b)
        .count();
    let wm = wins(&|r| Some((r.mio.as_ref()?.test_mse, r.lmem.as_ref()?.test_mse)));
    let budgets: Vec<_> = rs.iter().map(|r| r.chosen_budget.unwrap_or(999)).collect();
    println!(
        "{tag}: b mio={mio_b:.5} ols={ols_b:.5} (x{:.1}) lm={lm_b:.5} (lm/mio {:.2}) [mio<=lm {wb}/{}] | g mio={mio_g:.4} lm={lm_g:.4} [mio<lm {wg}] | rec={rec:.2} | mse mio={mio_m:.4} ols={ols_m:.4} rid={rid_m:.4} lm={lm_m:.4} [mio<=lm {wm}] | bud={budgets:?} | {t:.0}s",
        ols_b / mio_b, lm_b / mio_b, rs.len()
    );
}

#[test]
#[ignore]
fn p1_sparse() {
    for &npc in &[50usize, 100] {
        for &sig in &[0.075, 0.1, 0.15] {
            for &zf in &[0.9, 0.5, 0.2] {
                let mut cfg = ScenarioConfig::new(Preset::High, EffectType::Sparse { zero_fraction: zf });
                cfg.sigma_eps = sig;
                cfg.n_per_cluster = npc;
                let t0 = Instant::now();
                let rs = cell(&cfg, 16, 42, &EvalOptions::default());
                show2(&format!("n{npc} sig{sig} zf{zf}"), &rs, t0.elapsed().as_secs_f64());
            }
        }
    }
}

#[test]
#[ignore]
fn p2_recovery() {
    for &(tr, va) in &[(0.7, 0.1), (0.65, 0.15), (0.6, 0.2)] {
        for &zf in &[0.9, 0.5, 0.2, 0.0] {
            let mut cfg = ScenarioConfig::new(Preset::High, EffectType::Sparse { zero_fraction: zf });
            cfg.sigma_eps = 0.25;
            cfg.split_fractions = (tr, va, 1.0 - tr - va);
            let t0 = Instant::now();
            let rs = cell(&cfg, 16, 42, &EvalOptions::default());
            let rec = rs.iter().filter_map(|r| r.mio.as_ref().map(|x| x.sparsity_recovery)).sum::<f64>() / rs.len() as f64;
            let buds: Vec<_> = rs.iter().map(|r| r.chosen_budget.unwrap_or(999)).collect();
            println!("splits({tr},{va}) zf{zf}: rec={rec:.3} bud={buds:?} {:.0}s", t0.elapsed().as_secs_f64());
        }
    }
}

#[test]
#[ignore]
fn p3_gauss() {
    for &sig in &[0.25, 0.5, 1.0] {
        for &var in &[10.0, 100.0] {
            let mut cfg = ScenarioConfig::new(Preset::High, EffectType::Gaussian { variance: var });
            cfg.sigma_eps = sig;
            cfg.n_per_cluster = 100;
            let t0 = Instant::now();
            let rs = cell(&cfg, 12, 42, &EvalOptions::default());
            let olm = med(rs.iter().filter_map(|r| Some(r.ols.as_ref()?.beta_err / r.lmem.as_ref()?.beta_err)).collect());
            show2(&format!("sig{sig} var{var} (ols/lm {olm:.1})"), &rs, t0.elapsed().as_secs_f64());
        }
    }
}

#[test]
#[ignore]
fn p4_icc() {
    for &npc in &[400usize, 800] {
        for &icc in &[0.5, 0.9] {
            let mut cfg = ScenarioConfig::new(Preset::Medium, EffectType::IccTarget { icc });
            cfg.n_per_cluster = npc;
            for reml in [false] {
                let opts = EvalOptions { reml, ..EvalOptions::default() };
                let t0 = Instant::now();
                let rs = cell(&cfg, 24, 42, &opts);
                let mi = med(rs.iter().filter_map(|r| r.mio.as_ref().and_then(|m| m.icc_est)).collect());
                let li = med(rs.iter().filter_map(|r| r.lmem.as_ref().and_then(|m| m.icc_est)).collect());
                println!("n{npc} icc{icc} reml={reml}: mio={mi:.3} lmem={li:.3} {:.0}s", t0.elapsed().as_secs_f64());
            }
        }
    }
}
