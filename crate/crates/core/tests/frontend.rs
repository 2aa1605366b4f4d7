use fleetplan::frontend::{
    path_is_free, search, segment_path, CoarsePath, GridMap, PathPoint, SearchParams, SegmentationParams, Vehicle,
};
use fleetplan::geometry::{wrap_angle, Circle, Pose};
use fleetplan::trajmodel::Direction;
use fleetplan::Error;
use proptest::prelude::*;

const VEH: Vehicle = Vehicle { wheelbase: 0.6, phi_max: 0.6 };

fn empty_map() -> GridMap {
    GridMap::new([-10.0, 10.0, -10.0, 10.0], 0.25, &[], 0.3).unwrap()
}

fn ends_at_goal(path: &CoarsePath, goal: Pose, params: &SearchParams) {
    let last = path.points.last().unwrap().pose;
    assert!((last.position() - goal.position()).norm() <= params.goal_position_tol + 1e-9);
    assert!(wrap_angle(last.theta - goal.theta).abs() <= params.goal_heading_tol + 1e-9);
}

#[test]
fn straight_goal_is_a_single_forward_run() {
    let params = SearchParams::default();
    let goal = Pose::new(5.0, 0.0, 0.0);
    let path = search(Pose::new(0.0, 0.0, 0.0), goal, &empty_map(), &params, &VEH).unwrap();
    assert!(!path.has_reverse());
    assert!((path.length() - 5.0).abs() <= 0.05 * 5.0, "length {}", path.length());
    ends_at_goal(&path, goal, &params);
}

#[test]
fn goal_behind_uses_reverse() {
    let params = SearchParams::default();
    let goal = Pose::new(-1.0, 0.0, 0.0);
    let path = search(Pose::new(0.0, 0.0, 0.0), goal, &empty_map(), &params, &VEH).unwrap();
    assert!(path.has_reverse());
    ends_at_goal(&path, goal, &params);
}

#[test]
fn goal_inside_obstacle_has_no_path() {
    let map = GridMap::new([-10.0, 10.0, -10.0, 10.0], 0.25, &[Circle::new(5.0, 0.0, 1.0)], 0.3).unwrap();
    let r = search(Pose::new(0.0, 0.0, 0.0), Pose::new(5.0, 0.0, 0.0), &map, &SearchParams::default(), &VEH);
    assert!(matches!(r, Err(Error::NoPath(_))), "{r:?}");
}

#[test]
fn path_avoids_obstacles() {
    let circles = [Circle::new(2.5, 0.0, 1.0), Circle::new(2.5, 3.0, 0.8)];
    let map = GridMap::new([-10.0, 10.0, -10.0, 10.0], 0.25, &circles, 0.3).unwrap();
    let params = SearchParams::default();
    let goal = Pose::new(5.0, 0.0, 0.0);
    let path = search(Pose::new(0.0, 0.0, 0.0), goal, &map, &params, &VEH).unwrap();
    assert!(path_is_free(&path, &map));
    for p in &path.points {
        for c in &circles {
            assert!((p.pose.position() - c.center()).norm() > c.radius);
        }
    }
    ends_at_goal(&path, goal, &params);
}

fn seg_params() -> SegmentationParams {
    SegmentationParams { piece_length: 1.0, v_guess: 1.0, rest_accel: 0.3 }
}

#[test]
fn forward_then_reverse_splits_in_two() {
    let mut points: Vec<PathPoint> = (0..=6)
        .map(|i| PathPoint { pose: Pose::new(0.5 * i as f64, 0.0, 0.0), dir: Direction::Forward })
        .collect();
    points.extend((1..=4).map(|i| PathPoint { pose: Pose::new(3.0 - 0.5 * i as f64, 0.0, 0.0), dir: Direction::Reverse }));
    let g = segment_path(&CoarsePath { points }, &seg_params()).unwrap();
    assert_eq!(g.segments.len(), 2);
    assert_eq!(g.segments[0].eta, Direction::Forward);
    assert_eq!(g.segments[1].eta, Direction::Reverse);
    assert_eq!(g.shifts.len(), 1);
    assert!((g.shifts[0].pose.position().x - 3.0).abs() < 1e-12);
    assert_eq!(g.segments[0].piece_count(), 3);
    assert_eq!(g.segments[1].piece_count(), 2);
}

fn polyline_length(points: &[PathPoint]) -> f64 {
    points.windows(2).map(|w| (w[1].pose.position() - w[0].pose.position()).norm()).sum()
}

proptest! {
    #[test]
    fn segmentation_is_a_partition(
        steps in prop::collection::vec((0.05f64..0.6, -0.5f64..0.5, any::<bool>()), 2..40),
    ) {
        let mut pose = Pose::new(0.0, 0.0, 0.0);
        let mut points = vec![PathPoint { pose, dir: if steps[0].2 { Direction::Reverse } else { Direction::Forward } }];
        for (len, turn, rev) in &steps {
            let dir = if *rev { Direction::Reverse } else { Direction::Forward };
            pose.theta += turn;
            let d = dir.eta() * len;
            pose = Pose::new(pose.x + d * pose.theta.cos(), pose.y + d * pose.theta.sin(), pose.theta);
            points.push(PathPoint { pose, dir });
        }
        let total = polyline_length(&points);
        let g = segment_path(&CoarsePath { points }, &seg_params()).unwrap();
        let sum: f64 = g.run_lengths.iter().sum();
        prop_assert!((sum - total).abs() < 1e-9, "{} vs {}", sum, total);
        prop_assert_eq!(g.shifts.len() + 1, g.segments.len());
        for w in g.segments.windows(2) {
            prop_assert_ne!(w[0].eta, w[1].eta);
        }
        for (s, len) in g.segments.iter().zip(&g.run_lengths) {
            prop_assert_eq!(s.piece_count(), (len / 1.0).ceil().max(1.0) as usize);
        }
    }
}
