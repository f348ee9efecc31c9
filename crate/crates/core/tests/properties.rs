use proptest::prelude::*;

use cfphys::bench::log_grid;
use cfphys::eval::{frame_psnr, min_cost_assignment, PSNR_CAP};
use cfphys::render::Frame;
use cfphys::sim::{resolve_collision, simulate, Body, Scene, Vec2};

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn contact_impulse_conserves(
        m1 in 0.1f64..50.0, m2 in 0.1f64..50.0,
        angle in 0.0f64..6.28,
        vx in -3.0f64..3.0, vy in -3.0f64..3.0,
        wx in -3.0f64..3.0, wy in -3.0f64..3.0,
    ) {
        let n = Vec2::from_angle(angle);
        let a = Body::new(Vec2::ZERO, Vec2::new(vx, vy), 0.05, m1, 0);
        let b = Body::new(n * 0.1, Vec2::new(wx, wy), 0.05, m2, 1);
        let out = resolve_collision(&a, &b);
        let p0 = a.momentum() + b.momentum();
        let p1 = out.first.momentum() + out.second.momentum();
        prop_assert!((p1 - p0).norm() <= 1e-9 * (1.0 + p0.norm()));
        let e0 = a.kinetic_energy() + b.kinetic_energy();
        let e1 = out.first.kinetic_energy() + out.second.kinetic_energy();
        prop_assert!((e1 - e0).abs() <= 1e-9 * (1.0 + e0));
        // Separating pairs are left alone.
        let approaching = (b.velocity - a.velocity).dot(n) < 0.0;
        prop_assert_eq!(out.applied, approaching);
    }

    #[test]
    fn boxed_simulation_stays_inside_and_elastic(
        vx in -1.5f64..1.5, vy in -1.5f64..1.5,
        wx in -1.5f64..1.5, wy in -1.5f64..1.5,
        heavy in proptest::bool::ANY,
    ) {
        let m = if heavy { 10.0 } else { 1.0 };
        let scene = Scene::new(vec![
            Body::new(Vec2::new(0.3, 0.4), Vec2::new(vx, vy), 0.06, m, 0),
            Body::new(Vec2::new(0.7, 0.6), Vec2::new(wx, wy), 0.06, 1.0, 1),
        ]).unwrap();
        let traj = simulate(&scene, &[m, 1.0], 2.0, 25.0).unwrap();
        for frame in &traj.states {
            for s in frame {
                prop_assert!(s.position.x >= 0.06 - 1e-9 && s.position.x <= 0.94 + 1e-9);
                prop_assert!(s.position.y >= 0.06 - 1e-9 && s.position.y <= 0.94 + 1e-9);
            }
        }
        let last = traj.states.last().unwrap();
        let e = 0.5 * m * last[0].velocity.norm_sq() + 0.5 * last[1].velocity.norm_sq();
        prop_assert!(rel(e, scene.kinetic_energy()) < 1e-6 || scene.kinetic_energy() < 1e-12);
        prop_assert_eq!(&traj, &simulate(&scene, &[m, 1.0], 2.0, 25.0).unwrap());
    }

    #[test]
    fn assignment_is_an_optimal_permutation(
        cost in (1usize..=5).prop_flat_map(|k| proptest::collection::vec(proptest::collection::vec(0.0f64..10.0, k), k)),
    ) {
        let k = cost.len();
        let a = min_cost_assignment(&cost);
        let mut cols: Vec<usize> = a.iter().map(|j| j.unwrap()).collect();
        let got: f64 = cols.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
        cols.sort();
        prop_assert_eq!(cols, (0..k).collect::<Vec<_>>());
        // No single swap improves it.
        let a: Vec<usize> = a.iter().map(|j| j.unwrap()).collect();
        for i in 0..k {
            for j in i + 1..k {
                let swapped = got - cost[i][a[i]] - cost[j][a[j]] + cost[i][a[j]] + cost[j][a[i]];
                prop_assert!(swapped >= got - 1e-9);
            }
        }
    }

    #[test]
    fn psnr_is_symmetric_and_capped(
        pixels in proptest::collection::vec(0.0f64..=1.0, 4 * 4 * 3),
        shift in 0.0f64..0.5,
    ) {
        let a = Frame { height: 4, width: 4, data: pixels.clone() };
        let b = Frame { height: 4, width: 4, data: pixels.iter().map(|p| (p + shift).min(1.0)).collect() };
        prop_assert_eq!(frame_psnr(&a, &a).unwrap(), PSNR_CAP);
        let ab = frame_psnr(&a, &b).unwrap();
        prop_assert_eq!(ab, frame_psnr(&b, &a).unwrap());
        prop_assert!(ab <= PSNR_CAP);
    }

    #[test]
    fn log_grid_spans_its_range(lo in 0.01f64..10.0, ratio in 1.5f64..1e4, points in 2usize..40) {
        let g = log_grid(lo, lo * ratio, points);
        prop_assert_eq!(g.len(), points);
        prop_assert!(rel(g[0], lo) < 1e-12);
        prop_assert!(rel(g[points - 1], lo * ratio) < 1e-12);
        prop_assert!(g.windows(2).all(|w| w[1] > w[0]));
    }
}
