//! Splitting LiDAR sweeps into a static world cloud and per-object clouds
//! stored in their box frames, and putting them back together at any time.

use std::collections::{BTreeMap, BTreeSet};

use super::{transform_points, BBoxTrack, PointCloud, STATIC_ID};
use crate::error::{Error, Result};

/// Multi-frame aggregate: static points in world frame, dynamic points in the
/// canonical frame of their tracked box.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FusedScene {
    pub static_world: PointCloud,
    pub objects: BTreeMap<i32, PointCloud>,
    pub tracks: Vec<BBoxTrack>,
}

impl FusedScene {
    pub fn new(
        static_world: PointCloud,
        objects: BTreeMap<i32, PointCloud>,
        tracks: Vec<BBoxTrack>,
    ) -> Result<Self> {
        if static_world.object_ids.iter().any(|&id| id != STATIC_ID) {
            return Err(Error::invalid("static world points must carry object id -1"));
        }
        for id in objects.keys() {
            if !tracks.iter().any(|t| t.object_id() == *id) {
                return Err(Error::invalid(format!("object {id} has no track")));
            }
        }
        Ok(Self {
            static_world,
            objects,
            tracks,
        })
    }

    pub fn track(&self, object_id: i32) -> Option<&BBoxTrack> {
        self.tracks.iter().find(|t| t.object_id() == object_id)
    }

    pub fn num_points(&self) -> usize {
        self.static_world.len() + self.objects.values().map(PointCloud::len).sum::<usize>()
    }
}

/// Output of [`separate_dynamic`].
#[derive(Debug, Clone, Default)]
pub struct Separation {
    pub static_cloud: PointCloud,
    pub dynamic: BTreeMap<i32, PointCloud>,
    /// Tracks that could not be used at the query time.
    pub warnings: Vec<String>,
}

/// Assigns every point strictly inside a tracked box at time `t` to that
/// object, re-expressed in the box frame. Overlaps go to the nearest box
/// center, then to the lower object id.
pub fn separate_dynamic(cloud: &PointCloud, tracks: &[BBoxTrack], t: f64) -> Separation {
    let mut warnings = Vec::new();
    let mut active: Vec<(&BBoxTrack, super::Pose)> = Vec::new();
    for track in tracks {
        if track.covers(t) {
            active.push((track, track.pose_at(t).inverse()));
        } else {
            warnings.push(format!(
                "track {} has no keyframe range covering t = {t}; skipped",
                track.object_id()
            ));
        }
    }
    active.sort_by_key(|(tr, _)| tr.object_id());

    let mut out = Separation {
        warnings,
        ..Default::default()
    };
    for i in 0..cloud.len() {
        let p = &cloud.positions[i];
        let mut best: Option<(f64, i32, nalgebra::Vector3<f64>)> = None;
        for (track, world_to_box) in &active {
            let local = world_to_box.transform_point(p);
            if !track.contains_local(&local) {
                continue;
            }
            let dist = local.norm();
            // Sorted by id, so a strict comparison keeps the lower id on ties.
            if best.is_none_or(|(d, _, _)| dist < d) {
                best = Some((dist, track.object_id(), local));
            }
        }
        match best {
            Some((_, id, local)) => {
                out.dynamic.entry(id).or_default().push(local, cloud.colors[i], id)
            }
            None => out.static_cloud.push(*p, cloud.colors[i], STATIC_ID),
        }
    }
    out
}

/// Fuses world-frame sweeps into a [`FusedScene`]. Also returns any track
/// warnings raised while separating the individual frames.
pub fn aggregate_with_warnings(
    frames: &[(PointCloud, f64)],
    tracks: &[BBoxTrack],
) -> Result<(FusedScene, Vec<String>)> {
    if frames.is_empty() {
        return Err(Error::NoFrames);
    }
    let mut scene = FusedScene {
        tracks: tracks.to_vec(),
        ..Default::default()
    };
    let mut warnings = Vec::new();
    for (cloud, t) in frames {
        let sep = separate_dynamic(cloud, tracks, *t);
        scene.static_world.extend_from(&sep.static_cloud);
        for (id, pts) in sep.dynamic {
            scene.objects.entry(id).or_default().extend_from(&pts);
        }
        warnings.extend(sep.warnings);
    }
    Ok((scene, warnings))
}

pub fn aggregate(frames: &[(PointCloud, f64)], tracks: &[BBoxTrack]) -> Result<FusedScene> {
    aggregate_with_warnings(frames, tracks).map(|(scene, _)| scene)
}

/// World-frame cloud at time `t`: static points plus every non-excluded
/// object mapped through its track pose. Dynamic points keep their object id.
pub fn recompose(scene: &FusedScene, t: f64, exclude: &BTreeSet<i32>) -> Result<PointCloud> {
    if let Some(bad) = exclude.iter().find(|id| !scene.objects.contains_key(id)) {
        return Err(Error::UnknownObject(*bad));
    }
    let mut out = scene.static_world.clone();
    for (id, pts) in &scene.objects {
        if exclude.contains(id) {
            continue;
        }
        let track = scene.track(*id).ok_or(Error::UnknownObject(*id))?;
        out.extend_from(&transform_points(pts, &track.pose_at(t)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Keyframe, Pose};
    use nalgebra::{UnitQuaternion, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn static_box(id: i32, center: Vector3<f64>, size: f64) -> BBoxTrack {
        BBoxTrack::new(
            id,
            Vector3::repeat(size),
            vec![Keyframe {
                t: 0.0,
                pose: Pose::from_translation(center),
            }],
            1,
        )
        .unwrap()
    }

    fn moving_box(id: i32) -> BBoxTrack {
        BBoxTrack::new(
            id,
            Vector3::new(2.0, 1.5, 4.0),
            vec![
                Keyframe {
                    t: 0.0,
                    pose: Pose::from_translation(Vector3::new(0.0, 0.0, 10.0)),
                },
                Keyframe {
                    t: 1.0,
                    pose: Pose::from_parts(
                        UnitQuaternion::from_euler_angles(0.0, 0.3, 0.0),
                        Vector3::new(1.0, 0.0, 15.0),
                    ),
                },
            ],
            2,
        )
        .unwrap()
    }

    #[test]
    fn center_point_is_canonical_origin() {
        let tracks = [static_box(4, Vector3::new(3.0, 1.0, 8.0), 2.0)];
        let mut cloud = PointCloud::default();
        cloud.push(Vector3::new(3.0, 1.0, 8.0), [1.0, 0.0, 0.0], -1);
        cloud.push(Vector3::new(103.0, 1.0, 8.0), [0.0, 1.0, 0.0], -1);
        let sep = separate_dynamic(&cloud, &tracks, 0.0);
        assert_eq!(sep.dynamic[&4].positions[0], Vector3::zeros());
        assert_eq!(sep.dynamic[&4].object_ids[0], 4);
        assert_eq!(sep.static_cloud.positions, vec![Vector3::new(103.0, 1.0, 8.0)]);
        assert!(sep.warnings.is_empty());
    }

    #[test]
    fn out_of_range_track_is_skipped_with_warning() {
        let tracks = [static_box(0, Vector3::zeros(), 2.0)];
        let mut cloud = PointCloud::default();
        cloud.push(Vector3::zeros(), [0.0; 3], -1);
        let sep = separate_dynamic(&cloud, &tracks, 5.0);
        assert_eq!(sep.static_cloud.len(), 1);
        assert_eq!(sep.warnings.len(), 1);
    }

    #[test]
    fn overlaps_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let tracks: Vec<BBoxTrack> = (0..6)
            .map(|id| {
                let c = Vector3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
                static_box(id, c, rng.gen_range(1.0..3.0))
            })
            .collect();
        let mut cloud = PointCloud::default();
        for _ in 0..2000 {
            let p = Vector3::new(rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0));
            cloud.push(p, [0.0; 3], -1);
        }
        let sep = separate_dynamic(&cloud, &tracks, 0.0);

        // Brute force: for each point scan all boxes with plain comparisons.
        let mut expected: BTreeMap<i32, usize> = BTreeMap::new();
        let mut expected_static = 0;
        for p in &cloud.positions {
            let mut owner: Option<(f64, i32)> = None;
            for tr in &tracks {
                let c = tr.pose_at(0.0).translation().clone_owned();
                let h = tr.size() * 0.5;
                let d = p - c;
                if d.x.abs() < h.x && d.y.abs() < h.y && d.z.abs() < h.z {
                    let dist = d.norm();
                    let better = match owner {
                        None => true,
                        Some((bd, bid)) => dist < bd || (dist == bd && tr.object_id() < bid),
                    };
                    if better {
                        owner = Some((dist, tr.object_id()));
                    }
                }
            }
            match owner {
                Some((_, id)) => *expected.entry(id).or_default() += 1,
                None => expected_static += 1,
            }
        }
        assert_eq!(sep.static_cloud.len(), expected_static);
        let got: BTreeMap<i32, usize> = sep.dynamic.iter().map(|(k, v)| (*k, v.len())).collect();
        assert_eq!(got, expected);
        assert_eq!(sep.static_cloud.len() + got.values().sum::<usize>(), cloud.len());
    }

    #[test]
    fn aggregate_counts_and_errors() {
        assert!(matches!(aggregate(&[], &[]), Err(Error::NoFrames)));
        let mut a = PointCloud::default();
        a.push(Vector3::new(1.0, 0.0, 0.0), [0.0; 3], -1);
        let mut b = PointCloud::default();
        b.push(Vector3::new(2.0, 0.0, 0.0), [0.0; 3], -1);
        b.push(Vector3::new(3.0, 0.0, 0.0), [0.0; 3], -1);
        let one = aggregate(&[(a.clone(), 0.0)], &[]).unwrap();
        assert_eq!(one.static_world, a);
        assert!(one.objects.is_empty());
        let two = aggregate(&[(a, 0.0), (b, 1.0)], &[]).unwrap();
        assert_eq!(two.static_world.len(), 3);
    }

    #[test]
    fn rigidly_attached_point_has_one_canonical_position() {
        let track = moving_box(2);
        let canonical = Vector3::new(0.3, -0.2, 1.1);
        let frames: Vec<(PointCloud, f64)> = [0.0, 1.0]
            .iter()
            .map(|&t| {
                let mut c = PointCloud::default();
                c.push(track.pose_at(t).transform_point(&canonical), [0.5; 3], -1);
                (c, t)
            })
            .collect();
        let fused = aggregate(&frames, &[track]).unwrap();
        let pts = &fused.objects[&2].positions;
        assert_eq!(pts.len(), 2);
        assert!((pts[0] - pts[1]).norm() < 1e-6);
        assert!((pts[0] - canonical).norm() < 1e-6);
    }

    #[test]
    fn recompose_restores_world_positions() {
        let track = moving_box(2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = 0.4;
        let pose = track.pose_at(t);
        let mut cloud = PointCloud::default();
        for _ in 0..50 {
            let local = Vector3::new(rng.gen_range(-0.9..0.9), rng.gen_range(-0.7..0.7), rng.gen_range(-1.9..1.9));
            cloud.push(pose.transform_point(&local), [0.1; 3], -1);
        }
        for _ in 0..30 {
            cloud.push(Vector3::new(rng.gen_range(5.0..9.0), 0.0, rng.gen_range(0.0..30.0)), [0.9; 3], -1);
        }
        let fused = aggregate(&[(cloud.clone(), t)], std::slice::from_ref(&track)).unwrap();
        let back = recompose(&fused, t, &BTreeSet::new()).unwrap();
        assert_eq!(back.len(), cloud.len());
        // Static points come first, then the object; match by nearest original.
        for p in &back.positions {
            let nearest = cloud.positions.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min);
            assert!(nearest < 1e-6);
        }
        let without = recompose(&fused, t, &BTreeSet::from([2])).unwrap();
        assert_eq!(back.len() - without.len(), fused.objects[&2].len());
        assert!(matches!(
            recompose(&fused, t, &BTreeSet::from([9])),
            Err(Error::UnknownObject(9))
        ));
    }

    #[test]
    fn recompose_without_tracks_is_static_world() {
        let mut cloud = PointCloud::default();
        cloud.push(Vector3::new(1.0, 2.0, 3.0), [0.0; 3], -1);
        let fused = aggregate(&[(cloud.clone(), 0.0)], &[]).unwrap();
        assert_eq!(recompose(&fused, 7.0, &BTreeSet::new()).unwrap(), cloud);
    }
}
