//! Brute-force oracles and random instance generators shared by the integration tests.
#![allow(dead_code)]

use hoimimic::geometry::{Joint, JointKind, Pose, Rotation, Skeleton};
use hoimimic::targets::TrackSet;
use nalgebra::{Matrix4, Vector2, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_point(rng: &mut ChaCha8Rng, scale: f64) -> Vector3<f64> {
    Vector3::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale), rng.random_range(-scale..scale))
}

pub fn random_points(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<Vector3<f64>> {
    (0..n).map(|_| random_point(rng, scale)).collect()
}

pub fn random_rotation(rng: &mut ChaCha8Rng) -> Rotation {
    Rotation::from_wxyz(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
}

/// Mean over `a` of the squared distance to the nearest point of `b`, by double loop.
pub fn chamfer_oracle(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    let mut total = 0.0;
    for p in a {
        let mut best = f64::INFINITY;
        for q in b {
            let d = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
            if d < best {
                best = d;
            }
        }
        total += best;
    }
    total / a.len() as f64
}

/// Advantage as the explicit sum Σ_l (γλ)^l δ_{t+l}, stopping after the first done step.
pub fn gae_oracle(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    let delta: Vec<f64> = (0..n)
        .map(|t| rewards[t] + if dones[t] { 0.0 } else { gamma * values[t + 1] } - values[t])
        .collect();
    (0..n)
        .map(|t| {
            let mut sum = 0.0;
            let mut w = 1.0;
            for l in t..n {
                sum += w * delta[l];
                if dones[l] {
                    break;
                }
                w *= gamma * lambda;
            }
            sum
        })
        .collect()
}

/// Skinning transfer by full sort and an unshifted softmax.
pub fn skinning_oracle(
    target: &[Vector3<f64>],
    source: &[Vector3<f64>],
    weights: &[Vec<f64>],
    offsets: &[Vector3<f64>],
    k: usize,
    sigma: f64,
) -> (Vec<Vec<f64>>, Vec<Vector3<f64>>) {
    let mut out_w = Vec::new();
    let mut out_o = Vec::new();
    for x in target {
        let mut order: Vec<(f64, usize)> = source.iter().enumerate().map(|(i, s)| ((x - s).norm_squared(), i)).collect();
        order.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let near = &order[..k];
        let scores: Vec<f64> = near.iter().map(|(d, _)| (-d / (2.0 * sigma * sigma)).exp()).collect();
        let z: f64 = scores.iter().sum();
        let mut w = vec![0.0; weights[0].len()];
        let mut o = Vector3::zeros();
        for ((_, i), s) in near.iter().zip(&scores) {
            for (a, b) in w.iter_mut().zip(&weights[*i]) {
                *a += s / z * b;
            }
            o += offsets[*i] * (s / z);
        }
        let sum: f64 = w.iter().sum();
        out_w.push(w.iter().map(|v| v / sum).collect());
        out_o.push(o);
    }
    (out_w, out_o)
}

fn mean_displacement(tracks: &TrackSet, t: usize) -> f64 {
    let mut d = Vec::new();
    for i in 0..tracks.point_count() {
        if tracks.visible[t][i] && tracks.visible[t - 1][i] {
            d.push((tracks.points[t][i] - tracks.points[t - 1][i]).norm());
        }
    }
    if d.is_empty() {
        0.0
    } else {
        d.iter().sum::<f64>() / d.len() as f64
    }
}

/// Contact labels by literal 1-based transcription of the estimation procedure.
pub fn contact_oracle(objects: &TrackSet, hand: &TrackSet, tau: f64) -> Vec<bool> {
    let n = objects.frame_count();
    // c[1..=n], s[2..=n]; slot 0 unused
    let mut c = vec![0u8; n + 1];
    let mut s_obj = vec![f64::NAN; n + 1];
    let mut s_hand = vec![f64::NAN; n + 1];
    c[1] = 0;
    for t in 2..=n {
        s_obj[t] = mean_displacement(objects, t - 1);
        s_hand[t] = mean_displacement(hand, t - 1);
        c[t] = if s_obj[t] >= tau {
            1
        } else if s_hand[t] >= tau {
            0
        } else {
            c[t - 1]
        };
    }
    let mut t = n as i64 - 1;
    while t >= 2 {
        let u = t as usize;
        if c[u + 1] == 1 && s_obj[u] < tau && s_hand[u] < tau {
            c[u] = 1;
        }
        t -= 1;
    }
    c[1..].iter().map(|&x| x == 1).collect()
}

/// One-point tracks whose per-frame displacement along x follows `speeds`.
pub fn tracks_from_speeds(speeds: &[f64]) -> TrackSet {
    let mut x = 0.0;
    let mut points = vec![vec![Vector2::new(0.0, 0.0)]];
    for s in speeds {
        x += s;
        points.push(vec![Vector2::new(x, 0.0)]);
    }
    let visible = vec![vec![true]; points.len()];
    TrackSet::new(1000.0, 1000.0, points, visible).unwrap()
}

/// Random multi-point tracks with occasional occlusion and bursts of motion.
pub fn random_tracks(rng: &mut ChaCha8Rng, frames: usize, points: usize) -> TrackSet {
    let mut pts = vec![(0..points).map(|_| Vector2::new(rng.random_range(0.0..100.0), rng.random_range(0.0..100.0))).collect::<Vec<_>>()];
    let mut vis = vec![vec![true; points]];
    for _ in 1..frames {
        let moving = rng.random_bool(0.4);
        let prev = pts.last().unwrap().clone();
        let next = prev
            .iter()
            .map(|p| if moving { p + Vector2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) } else { *p })
            .collect();
        pts.push(next);
        vis.push((0..points).map(|_| rng.random_bool(0.9)).collect());
    }
    TrackSet::new(100.0, 100.0, pts, vis).unwrap()
}

/// Chain skeleton of `n` joints with random offsets and free ZYX hinges.
pub fn random_chain(rng: &mut ChaCha8Rng, n: usize) -> Skeleton {
    use hoimimic::geometry::{Axis, Dof};
    use std::f64::consts::PI;
    let joints = (0..n)
        .map(|j| Joint {
            name: format!("j{j}"),
            parent: if j == 0 { None } else { Some(j - 1) },
            offset: if j == 0 { Vector3::zeros() } else { random_point(rng, 0.3) },
            dofs: if j == 0 { vec![] } else { vec![Dof::new(Axis::Z, -PI, PI), Dof::new(Axis::Y, -PI, PI), Dof::new(Axis::X, -PI, PI)] },
            kind: JointKind::Body,
        })
        .collect();
    Skeleton::new(joints, vec![], [n - 2, n - 1]).unwrap()
}

pub fn random_pose(rng: &mut ChaCha8Rng, joints: usize) -> Pose {
    Pose { root_translation: random_point(rng, 1.0), root_orientation: random_rotation(rng), local: (0..joints).map(|_| random_rotation(rng)).collect() }
}

fn homogeneous(r: &Rotation, t: &Vector3<f64>) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r.to_matrix());
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(t);
    m
}

/// World matrices by explicit 4×4 products along each joint's root path.
pub fn fk_oracle(skel: &Skeleton, pose: &Pose) -> Vec<Matrix4<f64>> {
    (0..skel.joint_count())
        .map(|j| {
            let mut path = vec![j];
            while let Some(p) = skel.parent(*path.last().unwrap()) {
                path.push(p);
            }
            path.reverse();
            let mut m = homogeneous(&pose.root_orientation, &pose.root_translation);
            for &k in &path[1..] {
                m = m * homogeneous(&Rotation::identity(), &skel.joint(k).offset) * homogeneous(&pose.local[k], &Vector3::zeros());
            }
            m
        })
        .collect()
}
