use approx::assert_relative_eq;
use hembem::adaptivity::Mode;
use hembem::experiments::{
    compute_eoc, eoc_of, fitted_eoc, norm_v_on_contact, read_results_csv, run_eps_study, run_sequence,
    transfer_displacement, write_results_csv, ExperimentRecord, Problem, RunConfig,
};
use hembem::geometry::Vec2;
use hembem::kernels::{displacement_at, BemMatrices, Material, ShapeTable};
use hembem::mesh::{nested_location, BoundaryMesh, DofMap, Part, Refinement};
use hembem::quadrature::QuadratureOptions;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

fn small(levels: usize) -> RunConfig {
    RunConfig { n0: 2, uniform_levels: levels, ..RunConfig::default() }
}

#[test]
fn toml_config_fills_defaults() {
    let cfg = RunConfig::from_toml("theta = 0.4\nmode = \"hp\"\nn0 = 8\n").unwrap();
    assert_eq!(cfg.theta, 0.4);
    assert_eq!(cfg.mode, Mode::Hp);
    assert_eq!(cfg.n0, 8);
    assert_eq!(RunConfig { theta: 0.4, mode: Mode::Hp, n0: 8, ..RunConfig::default() }, cfg);
    assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
}

#[test]
fn bad_configs_rejected() {
    assert!(RunConfig::from_toml("no_such_key = 1").is_err());
    assert!(RunConfig::from_toml("theta = \"high\"").is_err());
    for cfg in [
        RunConfig { eps: -1.0, ..RunConfig::default() },
        RunConfig { poisson: 0.5, ..RunConfig::default() },
        RunConfig { n0: 0, ..RunConfig::default() },
        RunConfig { eps_min: 1.0, ..RunConfig::default() },
    ] {
        assert!(Problem::new(cfg).is_err());
    }
}

#[test]
fn eps_values_are_logarithmic() {
    let v = RunConfig::default().eps_values();
    assert_eq!(v.len(), 9);
    assert_relative_eq!(v[0], 1e-1);
    assert_relative_eq!(v[8], 1e-5, max_relative = 1e-12);
    for w in v.windows(2) {
        assert_relative_eq!(w[0] / w[1], 10f64.sqrt(), max_relative = 1e-12);
    }
}

#[test]
fn eoc_examples() {
    let n = [100.0, 200.0, 400.0, 800.0];
    let e: Vec<f64> = n.iter().map(|n: &f64| n.powf(-0.5)).collect();
    let (steps, skipped) = compute_eoc(&n, &e);
    assert_eq!(skipped, 0);
    assert_eq!(steps.len(), 3);
    for s in &steps {
        assert_relative_eq!(s.eoc, 0.5, epsilon = 1e-12);
    }
    let (flat, _) = compute_eoc(&n, &[0.3; 4]);
    assert!(flat.iter().all(|s| s.eoc.abs() < 1e-12));
    let (gap, skipped) = compute_eoc(&n, &[1.0, 0.0, 0.5, f64::NAN]);
    assert_eq!(skipped, 2);
    assert_eq!((gap[0].from, gap[0].to), (0, 2));
    assert_relative_eq!(gap[0].eoc, 0.5, epsilon = 1e-12);
    let e: Vec<f64> = n.iter().map(|n: &f64| 3.0 * n.powf(-0.53)).collect();
    assert_relative_eq!(fitted_eoc(&n, &e).unwrap(), 0.53, epsilon = 1e-12);
    assert_eq!(fitted_eoc(&n[..1], &e[..1]), None);
}

fn record(iter: usize, err: Option<f64>) -> ExperimentRecord {
    ExperimentRecord {
        iter,
        n_elem: 8 << iter,
        n_dof: 10 << iter,
        est_total: 0.125 / (iter + 1) as f64,
        est_bubble: 1.5e-3,
        est_pen: 0.0,
        est_cons: 2.25e-7,
        est_comp: 3.0e-2,
        err_u_p: err,
        err_lam_v: err.map(|e| 2.0 * e),
        wall_s: 1.25,
        eps: 1e-4,
    }
}

#[test]
fn results_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("results.csv");
    let records = vec![record(0, Some(0.1)), record(1, Some(1.0 / 3.0)), record(2, None)];
    write_results_csv(&records, &path).unwrap();
    let header = std::fs::read_to_string(&path).unwrap();
    assert!(header.starts_with("iter,n_elem,n_dof,est_total,est_bubble,est_pen,est_cons,est_comp,err_u_P,err_lam_V,wall_s,eps\n"));
    assert_eq!(read_results_csv(&path).unwrap(), records);
    let (steps, skipped) = eoc_of(&records, "err_u_P").unwrap();
    assert_eq!((steps.len(), skipped), (1, 1));
    assert!(eoc_of(&records, "bogus").is_err());
}

#[test]
fn results_csv_missing_column_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("results.csv");
    std::fs::write(&path, "iter,n_dof\n0,10\n").unwrap();
    assert!(read_results_csv(&path).is_err());
}

#[test]
fn contact_norm_matches_single_layer_matrix() {
    // p = 1: the density space is piecewise constant per component, so the
    // constant μ = 1 lifted with n = (0, −1) is an exact density vector
    let mesh = BoundaryMesh::benchmark(4).unwrap();
    let dofs = DofMap::new(&mesh).unwrap();
    let mat = Material::new(5.0, 0.45).unwrap();
    let q = QuadratureOptions::default();
    let bem = BemMatrices::assemble(&mesh, &dofs, &mat, &q).unwrap();
    let mut c = DVector::zeros(dofs.n_density);
    for (e, el) in mesh.elements.iter().enumerate() {
        if el.part == Part::Contact {
            c[dofs.density_index(&mesh, e, 1, 0)] = -1.0;
        }
    }
    let direct = c.dot(&(&bem.v * &c)).sqrt();
    let degree = vec![0; mesh.len()];
    let norm = norm_v_on_contact(&mesh, &degree, |_, _| 1.0, &mat, &q).unwrap();
    assert_relative_eq!(norm, direct, max_relative = 1e-10);
    let scaled = norm_v_on_contact(&mesh, &degree, |_, _| -2.5, &mat, &q).unwrap();
    assert_relative_eq!(scaled, 2.5 * norm, max_relative = 1e-12);
    assert_eq!(norm_v_on_contact(&mesh, &degree, |_, _| 0.0, &mat, &q).unwrap(), 0.0);
    // a quadratic is represented exactly from degree 2 on
    let quad = |_: usize, x: f64| 0.2 + x - 0.7 * x * x;
    let d2 = norm_v_on_contact(&mesh, &vec![2; mesh.len()], quad, &mat, &q).unwrap();
    let d4 = norm_v_on_contact(&mesh, &vec![4; mesh.len()], quad, &mat, &q).unwrap();
    assert_relative_eq!(d2, d4, max_relative = 1e-9);
}

#[test]
fn transfer_keeps_coarse_function() {
    let coarse = BoundaryMesh::benchmark(2).unwrap();
    let mut fine = coarse.refine(&[(0, Refinement::H), (3, Refinement::P), (6, Refinement::H)]).unwrap();
    fine = fine.refine(&[(1, Refinement::H), (2, Refinement::P)]).unwrap();
    let cd = DofMap::new(&coarse).unwrap();
    let fd = DofMap::new(&fine).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let u = DVector::from_fn(cd.n_full(), |_, _| rng.gen_range(-1.0..1.0));
    let ut = transfer_displacement(&coarse, &cd, &u, &fine, &fd).unwrap();
    let loc = nested_location(&fine, &coarse).unwrap();
    let table = ShapeTable::new(3);
    for (e, &(c, s0, s1)) in loc.iter().enumerate() {
        for _ in 0..5 {
            let xi: f64 = rng.gen_range(-1.0..1.0);
            let a = displacement_at(&table, &fine, &fd, &ut, e, xi);
            let b = displacement_at(&table, &coarse, &cd, &u, c, s0 + 0.5 * (xi + 1.0) * (s1 - s0));
            assert!((a - b).norm() < 1e-12);
        }
    }
    // a coarser degree on the fine mesh cannot hold the coarse function
    let p_coarse = coarse.refine(&[(0, Refinement::P)]).unwrap();
    let pd = DofMap::new(&p_coarse).unwrap();
    let up = DVector::zeros(pd.n_full());
    assert!(transfer_displacement(&p_coarse, &pd, &up, &coarse, &cd).is_err());
}

fn without_wall(r: &ExperimentRecord) -> ExperimentRecord {
    ExperimentRecord { wall_s: 0.0, ..*r }
}

#[test]
fn runs_are_deterministic_apart_from_timing() {
    let problem = Problem::new(small(2)).unwrap();
    let a = run_sequence(&problem, Mode::Uniform, None).unwrap();
    let b = run_sequence(&problem, Mode::Uniform, None).unwrap();
    let strip = |o: &[ExperimentRecord]| o.iter().map(without_wall).collect::<Vec<_>>();
    assert_eq!(strip(&a.records), strip(&b.records));
    for (x, y) in a.levels.iter().zip(&b.levels) {
        assert_eq!(x.u_full, y.u_full);
        assert_eq!(x.lambda.coeffs, y.lambda.coeffs);
    }
}

fn header(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn sequence_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let problem = Problem::new(small(3)).unwrap();
    let out = run_sequence(&problem, Mode::Uniform, Some(dir.path())).unwrap();
    assert_eq!(out.records.len(), 3);
    assert_eq!(out.records.iter().map(|r| r.n_elem).collect::<Vec<_>>(), vec![8, 16, 32]);
    // the last `error_cutoff` = 2 levels carry no error
    assert!(out.records[0].err_u_p.is_some() && out.records[0].err_lam_v.is_some());
    assert!(out.records[1].err_u_p.is_none() && out.records[2].err_u_p.is_none());
    for l in &out.levels {
        assert!(l.kkt <= 1e-10);
        assert_eq!(l.totals.penetration, 0.0);
    }
    let p = dir.path();
    assert_eq!(header(&p.join("law.csv")), "x,S,S_x");
    for k in 0..3 {
        assert_eq!(header(&p.join(format!("indicators_{k:03}.csv"))), "element,part,h,p,bubble,penetration,consistency,complementarity,total");
        assert_eq!(header(&p.join(format!("trace_{k:03}.csv"))), "s,u_n,gap,S_x,lambda");
        let mesh = std::fs::read_to_string(p.join(format!("mesh_{k:03}.jsonl"))).unwrap();
        assert_eq!(mesh.lines().count(), out.records[k].n_elem);
        let first: serde_json::Value = serde_json::from_str(mesh.lines().next().unwrap()).unwrap();
        for key in ["id", "v0", "v1", "part", "p", "level"] {
            assert!(first.get(key).is_some(), "mesh line lacks {key}");
        }
    }
    let back = read_results_csv(&p.join("results.csv")).unwrap();
    assert_eq!(back.iter().map(without_wall).collect::<Vec<_>>(), out.records.iter().map(without_wall).collect::<Vec<_>>());
}

#[test]
fn adaptive_run_refines_and_stops_at_dof_limit() {
    let cfg = RunConfig { n0: 2, adaptive_max_iter: 30, max_dof: 40, ..RunConfig::default() };
    let out = run_sequence(&Problem::new(cfg).unwrap(), Mode::Hp, None).unwrap();
    assert!(out.records.len() >= 2);
    assert!(out.records.iter().all(|r| r.n_dof <= 40));
    for w in out.levels.windows(2) {
        assert!(w[1].n_dof > w[0].n_dof);
        assert!(nested_location(&w[1].mesh, &w[0].mesh).is_ok());
    }
}

#[test]
fn eps_study_on_a_coarse_mesh() {
    let cfg = RunConfig { eps_study_n0: 2, eps_max: 1e-2, eps_min: 1e-4, eps_per_decade: 1, ..RunConfig::default() };
    let out = run_eps_study(&Problem::new(cfg).unwrap(), None).unwrap();
    let eps: Vec<f64> = out.records.iter().map(|r| r.eps).collect();
    assert_eq!(eps.len(), 3);
    assert_relative_eq!(eps[2], 1e-4, max_relative = 1e-12);
    for r in &out.records {
        assert_eq!(r.n_elem, 8);
        assert!(r.err_u_p.unwrap().is_finite() && r.err_lam_v.unwrap().is_finite());
    }
}

#[test]
fn point_source_traction_converges() {
    // density of an exterior point-source displacement against its traction
    use hembem::kernels::{fundamental_solution, interpolate, traction_kernel};
    use hembem::polynomial::{gauss_legendre, legendre};
    use hembem::steklov::SteklovOperator;
    let mat = Material::new(5.0, 0.45).unwrap();
    let x0 = Vec2::new(-0.3, 0.9);
    let c = Vec2::new(0.7, -0.4);
    let error = |mesh: &BoundaryMesh| {
        let dofs = DofMap::new(mesh).unwrap();
        let bem = BemMatrices::assemble(mesh, &dofs, &mat, &QuadratureOptions::default()).unwrap();
        let psi = SteklovOperator::assemble(&bem, &dofs)
            .unwrap()
            .density(&interpolate(&dofs, |x| fundamental_solution(x, &x0, &mat).unwrap() * c));
        let mut err2 = 0.0;
        for (e, el) in mesh.elements.iter().enumerate() {
            let panel = mesh.panel(e);
            let rule = gauss_legendre(el.degree + 8);
            for (&xi, &w) in rule.points.iter().zip(&rule.weights) {
                let exact = traction_kernel(&x0, &panel.point(xi), &panel.normal(), &mat).unwrap() * c;
                let mut approx = Vec2::zeros();
                for comp in 0..2 {
                    for k in 0..el.degree {
                        approx[comp] += psi[dofs.density_index(mesh, e, comp, k)] * legendre(k, xi).0;
                    }
                }
                err2 += w * panel.jacobian() * (exact - approx).norm_squared();
            }
        }
        err2.sqrt()
    };
    let h: Vec<f64> = [4, 8, 16].iter().map(|&n| error(&BoundaryMesh::benchmark(n).unwrap())).collect();
    assert!(h[1] / h[2] > 1.9 && h[0] / h[1] > 1.9, "{h:?}");
    let p: Vec<f64> = (1..=3)
        .map(|p| {
            let mut mesh = BoundaryMesh::benchmark(4).unwrap();
            mesh.elements.iter_mut().for_each(|e| e.degree = p);
            error(&mesh)
        })
        .collect();
    assert!(p[1] < 0.2 * p[0] && p[2] < 0.2 * p[1], "{p:?}");
}
