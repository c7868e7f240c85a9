use std::collections::BTreeMap;

use fedsarsa::analysis::{
    constants, drift_delta, heterogeneity_report, solve_chi_star, solve_global, Instance, SolverOptions,
};
use fedsarsa::env::{garnet, Mdp};
use fedsarsa::experiment::{self, mean_std, ExperimentKind, ExperimentSpec};
use fedsarsa::lfa::{features_one_hot, ProjectionBall};
use fedsarsa::train::{parse_csv_rows, run_fedsarsa, RunConfig, Targets};

fn small_spec() -> ExperimentSpec {
    ExperimentSpec {
        n_agents_grid: vec![2, 4],
        local_steps_grid: vec![1, 10],
        samples_per_agent: 200,
        n_seeds: 3,
        ..ExperimentSpec::default()
    }
}

#[test]
fn generate_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let spec = ExperimentSpec::default();
    let p = experiment::generate(&spec, a.path()).unwrap();
    experiment::generate(&spec, b.path()).unwrap();
    assert_eq!(p.envs.len(), 2);
    assert!(p.admission.report.all_pass());
    for f in ["env_0.json", "env_1.json", "admission.json"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
    }
    let m = Mdp::from_json(&std::fs::read_to_string(a.path().join("env_0.json")).unwrap()).unwrap();
    assert_eq!((m.n_states(), m.n_actions(), m.branching()), (5, 3, 2));
}

#[test]
fn generate_writes_the_grid_for_table1() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ExperimentSpec { kind: Some(ExperimentKind::Table1), ..ExperimentSpec::default() };
    experiment::generate(&spec, dir.path()).unwrap();
    let grid = dir.path().join("table1_envs");
    let base = Mdp::from_json(&std::fs::read_to_string(grid.join("base.json")).unwrap()).unwrap();
    let n = std::fs::read_dir(&grid).unwrap().count();
    assert_eq!(n, 17);
    let m = Mdp::from_json(&std::fs::read_to_string(grid.join("perturbed_p0.5_r0.1.json")).unwrap()).unwrap();
    let inst = [base, m];
    assert!((fedsarsa::analysis::kernel_heterogeneity(&inst) - 0.5).abs() <= 1e-9);
    assert!((fedsarsa::analysis::reward_heterogeneity(&inst) - 0.1).abs() <= 1e-9);
}

#[test]
fn sweep_files_and_aggregates() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec();
    let summary = experiment::speedup(&spec, dir.path()).unwrap();
    assert_eq!(summary.series.len(), 4);
    for s in &summary.series {
        let stem = format!("N{}_H{}", s.n_agents, s.local_steps);
        let stacked = std::fs::read_to_string(dir.path().join("speedup").join(format!("{stem}.csv"))).unwrap();
        let aggregate = std::fs::read_to_string(dir.path().join("speedup").join(format!("{stem}_aggregate.csv"))).unwrap();
        assert!(stacked.contains("# seed 0: config_hash "));
        let mut per_round: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        let mut rows = 0;
        for line in stacked.lines().filter(|l| !l.starts_with('#')).skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            per_round.entry(f[1].parse().unwrap()).or_default().push(f[3].parse().unwrap());
            rows += 1;
        }
        let t = 200 / s.local_steps;
        assert_eq!(rows, spec.n_seeds * (t + 1));
        for line in aggregate.lines().filter(|l| !l.starts_with('#')).skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            let (m, sd) = mean_std(&per_round[&f[0].parse::<usize>().unwrap()]);
            let (fm, fs): (f64, f64) = (f[2].parse().unwrap(), f[3].parse().unwrap());
            assert!((fm - m).abs() <= 1e-12 * (1.0 + m.abs()));
            assert!((fs - sd).abs() <= 1e-12 * (1.0 + sd.abs()));
        }
    }
    let again = tempfile::tempdir().unwrap();
    experiment::speedup(&spec, again.path()).unwrap();
    let a = std::fs::read(dir.path().join("speedup/N4_H10.csv")).unwrap();
    let b = std::fs::read(again.path().join("speedup/N4_H10.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn sweep_is_independent_of_pool_size() {
    let spec = ExperimentSpec { n_agents_grid: vec![3], local_steps_grid: vec![5], samples_per_agent: 100, ..small_spec() };
    let run = |threads| {
        let dir = tempfile::tempdir().unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| experiment::speedup(&spec, dir.path()).unwrap());
        std::fs::read(dir.path().join("speedup/N3_H5.csv")).unwrap()
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn single_run_csv_parses() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ExperimentSpec { n_agents: 4, local_steps: 5, rounds: Some(12), ..ExperimentSpec::default() };
    let rec = experiment::single_run(&spec, dir.path()).unwrap();
    let rows = parse_csv_rows(&std::fs::read_to_string(dir.path().join("run.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 13);
    assert_eq!(rows, rec.rows);
}

#[test]
fn table1_cells_follow_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let t = experiment::table1(&ExperimentSpec::default(), dir.path()).unwrap();
    assert_eq!(t.cells.len(), 16);
    assert!(t.cells.iter().all(|c| c.status == "ok"));
    assert!(t.cell(0.0, 0.0).unwrap().mse.abs() <= 1e-9);
    for c in &t.cells {
        assert!((c.measured_eps_p - c.eps_p).abs() <= 1e-9);
        assert!((c.measured_eps_r - c.eps_r).abs() <= 1e-9);
    }
    let csv = std::fs::read_to_string(dir.path().join("table1/table1.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 17);
}

#[test]
fn report_has_every_section() {
    let doc = experiment::report(&ExperimentSpec::default()).unwrap();
    for key in ["constants", "heterogeneity", "drift", "assumptions", "theta_star", "chi_star", "bound_federated"] {
        assert!(doc.get(key).is_some(), "missing {key}");
    }
    assert_eq!(doc["constants"]["c_a"].as_f64(), Some(1.9));
}

fn pair_instance(a: Mdp, b: Mdp) -> Instance {
    let f = features_one_hot(a.n_states(), a.n_actions());
    let ball = ProjectionBall::default_for(f.dim(), a.gamma());
    Instance::new(&[a, b], f, 1e-3, ball).unwrap()
}

#[test]
fn drift_vanishes_without_heterogeneity_and_grows_with_h() {
    let opts = SolverOptions::default();
    let g = garnet(5, 3, 2, 0.9, 3).unwrap();
    let homo = pair_instance(g.clone(), g.clone());
    let hetero = pair_instance(g, garnet(5, 3, 2, 0.9, 2003).unwrap());
    for (inst, zero) in [(homo, true), (hetero, false)] {
        let star = solve_global(&inst, &opts).unwrap().theta;
        let consts = constants(&inst, &star, &[]).unwrap();
        let het = heterogeneity_report(&inst, &star, &consts, &opts).unwrap();
        let tds = inst.td_at(&star).unwrap();
        let mut norms = Vec::new();
        for h in [1, 2, 4, 8] {
            let eta = 0.01;
            let d = drift_delta(
                &tds,
                inst.weights(),
                &het.theta_tildes,
                &star,
                eta,
                h,
                (het.zeta_a, het.zeta_theta),
                consts.c_a,
                consts.c_proj_tilde,
            )
            .unwrap();
            assert!(d.norm <= d.crude_bound);
            norms.push(d.norm);
        }
        if zero {
            assert!(norms.iter().all(|n| *n == 0.0));
        } else {
            assert!(norms[0] < 1e-12, "H = 1 drift {}", norms[0]);
            assert!(norms.windows(2).all(|w| w[1] > w[0]), "{norms:?}");
        }
    }
}

#[test]
fn chi_star_differs_from_theta_star_under_heterogeneity() {
    let opts = SolverOptions::default();
    let inst = pair_instance(garnet(5, 3, 2, 0.9, 3).unwrap(), garnet(5, 3, 2, 0.9, 2003).unwrap());
    let star = solve_global(&inst, &opts).unwrap().theta;
    let chi = solve_chi_star(&inst, &opts).unwrap().theta;
    assert!(star.dist_sq(&chi).sqrt() > 100.0 * opts.tol);
}

#[test]
fn training_approaches_theta_star() {
    let opts = SolverOptions::default();
    let envs = vec![garnet(5, 3, 2, 0.9, 3).unwrap(), garnet(5, 3, 2, 0.9, 2003).unwrap()];
    let inst = pair_instance(envs[0].clone(), envs[1].clone());
    let star = solve_global(&inst, &opts).unwrap().theta;
    let mut c = RunConfig::new(8, 10, 3000, inst.beta());
    c.waive_assumptions = true;
    c.step_size = Some(0.02);
    c.log_every = 100;
    let rec = run_fedsarsa(&c, &envs, &Targets { theta_star: Some(star), chi_star: None }).unwrap();
    assert!(rec.last().mse_theta_star < 0.05 * rec.rows[0].mse_theta_star);
}
