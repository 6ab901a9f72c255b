//! Finite-difference checks of a scenario's analytic Lie-derivative bundle.

use auxcbf::cbf::{feasibility_jet, feasibility_value, ControlBounds, HocbfSpec, SystemModel};
use auxcbf::scenarios::acc::{FollowerModel, LeadMotion};
use auxcbf::scenarios::sacc::SaccModel;
use auxcbf::scenarios::vehicle::Resistance;
use nalgebra::{dvector, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{fd_lie, rel_err, FD_FLOOR};

pub const FD_TOL: f64 = 1e-5;

pub struct Bundle {
    pub name: &'static str,
    pub sys: Box<dyn SystemModel>,
    pub spec: HocbfSpec,
    pub bounds: ControlBounds,
}

fn check(what: String, analytic: f64, reference: f64, worst: &mut f64) -> Result<(), String> {
    let e = rel_err(analytic, reference, FD_FLOOR);
    *worst = worst.max(e);
    if e < FD_TOL {
        Ok(())
    } else {
        Err(format!(
            "{what}: analytic {analytic:e} vs finite difference {reference:e} (rel err {e:e})"
        ))
    }
}

/// Largest relative error over every analytic Lie derivative of the bundle:
/// the barrier chain, the coupling vector, `b_F` and `V` if present.
pub fn check_bundle(b: &Bundle, t: f64, x: &DVector<f64>) -> Result<f64, String> {
    let sys = b.sys.as_ref();
    let jet = sys.barrier_jet(t, x).map_err(|e| e.to_string())?;
    let m = jet.relative_degree();
    let q = sys.control_dim();
    let mut worst = 0.0f64;
    let at = |what: &str| format!("{} {what} at t = {t}, x = {:?}", b.name, x.as_slice());

    for j in 0..=m {
        let (lf, lg) = fd_lie(sys, |t, x| sys.barrier_jet(t, x).unwrap().drift[j], t, x);
        check(
            at(&format!("L_f^{} b", j + 1)),
            jet.drift[j + 1],
            lf,
            &mut worst,
        )?;
        for l in 0..q {
            check(
                at(&format!("L_g L_f^{j} b")),
                jet.actuated[j][l],
                lg[l],
                &mut worst,
            )?;
        }
    }
    for l in 0..q {
        let coupling = |t: f64, x: &DVector<f64>| sys.barrier_jet(t, x).unwrap().coupling()[l];
        let (lf, lg) = fd_lie(sys, coupling, t, x);
        check(
            at("L_f of coupling"),
            jet.drift_of_coupling[l],
            lf,
            &mut worst,
        )?;
        for i in 0..q {
            check(
                at("L_g of coupling"),
                jet.actuated_of_coupling[(l, i)],
                lg[i],
                &mut worst,
            )?;
        }
    }

    let fj = feasibility_jet(&b.spec, sys, &b.bounds, t, x).map_err(|e| e.to_string())?;
    let value =
        |t: f64, x: &DVector<f64>| feasibility_value(&b.spec, sys, &b.bounds, t, x).unwrap();
    let (lf, lg) = fd_lie(sys, value, t, x);
    check(at("L_f b_F"), fj.drift, lf, &mut worst)?;
    for l in 0..q {
        check(at("L_g b_F"), fj.actuated[l], lg[l], &mut worst)?;
    }

    if let Some(v) = sys.lyapunov_jet(t, x).map_err(|e| e.to_string())? {
        let value = |t: f64, x: &DVector<f64>| sys.lyapunov_jet(t, x).unwrap().unwrap().value;
        let (lf, lg) = fd_lie(sys, value, t, x);
        check(at("L_f V"), v.drift, lf, &mut worst)?;
        for l in 0..q {
            check(at("L_g V"), v.actuated[l], lg[l], &mut worst)?;
        }
    }
    Ok(worst)
}

pub fn sacc_bundle() -> Bundle {
    Bundle {
        name: "sacc",
        sys: Box::new(SaccModel {
            lead_speed: 13.89,
            safe_distance: 10.0,
        }),
        spec: HocbfSpec::new(vec![0.1, 0.1]).unwrap(),
        bounds: ControlBounds::scalar(-1.178, 1.178).unwrap(),
    }
}

pub fn follower(lead: LeadMotion, mass: f64, v_d: f64) -> Box<dyn SystemModel> {
    Box::new(FollowerModel {
        lead,
        mass,
        resistance: Resistance::default(),
        safe_distance: 10.0,
        desired_speed: v_d,
    })
}

pub fn acc_bounds(mass: f64, c_d: f64, c_a: f64) -> ControlBounds {
    ControlBounds::scalar(-c_d * mass * 9.81, c_a * mass * 9.81).unwrap()
}

pub fn vehicle2_bundle() -> Bundle {
    Bundle {
        name: "acc vehicle 2",
        sys: follower(LeadMotion::Sinusoid, 1650.0, 24.0),
        spec: HocbfSpec::new(vec![1.0, 1.0]).unwrap(),
        bounds: acc_bounds(1650.0, 0.4, 0.4),
    }
}

/// Vehicle 3 behind a vehicle 2 that holds `control`.
pub fn vehicle3_bundle(control: f64) -> Bundle {
    Bundle {
        name: "acc vehicle 3",
        sys: follower(
            LeadMotion::Follower {
                mass: 1650.0,
                resistance: Resistance::default(),
                control,
            },
            1550.0,
            25.0,
        ),
        spec: HocbfSpec::new(vec![1.0, 1.0]).unwrap(),
        bounds: acc_bounds(1550.0, 0.35, 0.35),
    }
}

pub fn random_sacc_state(rng: &mut ChaCha8Rng) -> DVector<f64> {
    dvector![rng.gen_range(0.0..300.0), rng.gen_range(0.0..60.0)]
}

/// `(x_lead, v_lead, x, v)` with positive speeds and the lead ahead.
pub fn random_follower_state(rng: &mut ChaCha8Rng) -> DVector<f64> {
    let x_l = rng.gen_range(-200.0..400.0);
    dvector![
        x_l,
        rng.gen_range(0.5..35.0),
        x_l - rng.gen_range(0.0..150.0),
        rng.gen_range(0.5..35.0)
    ]
}

pub fn random_vehicle2_control(rng: &mut ChaCha8Rng) -> f64 {
    rng.gen_range(-0.4 * 1650.0 * 9.81..0.4 * 1650.0 * 9.81)
}

/// Worst relative error over `n` random states of each bundle, keyed by name.
pub fn sweep(seed: u64, n: usize) -> Result<Vec<(&'static str, f64)>, String> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let sacc = sacc_bundle();
    let v2 = vehicle2_bundle();
    let mut worst = [0.0f64; 3];
    for _ in 0..n {
        let t = rng.gen_range(0.0..30.0);
        let x = random_sacc_state(&mut rng);
        worst[0] = worst[0].max(check_bundle(&sacc, t, &x)?);
        let x = random_follower_state(&mut rng);
        worst[1] = worst[1].max(check_bundle(&v2, t, &x)?);
        let v3 = vehicle3_bundle(random_vehicle2_control(&mut rng));
        let x = random_follower_state(&mut rng);
        worst[2] = worst[2].max(check_bundle(&v3, t, &x)?);
    }
    out.push((sacc.name, worst[0]));
    out.push((v2.name, worst[1]));
    out.push(("acc vehicle 3", worst[2]));
    Ok(out)
}
