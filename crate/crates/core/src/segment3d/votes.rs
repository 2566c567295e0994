//! Foreground initialisation from the detections of every view.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::error::{Error, Result};
use crate::geometry::unproject_frame;
use crate::ingest::cloud::{gather_points, resolve_reference, seed_masks, voxel_key, voxelize};
use crate::ingest::{morphology, CloudConfig, Detection, Episode, Label, LabeledCloud};

type Key = [i64; 3];

/// Voxels hit by the eroded mask of one detection, in the reference frame.
fn detection_voxels(episode: &Episode, det: &Detection, config: &CloudConfig, ref_to_manifest: &crate::Pose) -> Result<BTreeSet<Key>> {
    let frame = episode
        .frame(det.view_index)
        .ok_or_else(|| Error::InvalidInput(format!("detection refers to missing view {}", det.view_index)))?;
    let mask = morphology::erode(&det.mask, config.erode_radius);
    let rel = frame.pose.compose(ref_to_manifest);
    let pts = unproject_frame(&frame.rgb, &frame.depth, &frame.intrinsics, &rel, Some(&mask), frame.view_index)?;
    Ok(pts.iter().map(|p| voxel_key(p.point.position(), config.voxel_size)).collect())
}

/// 26-connected components of a voxel set, numbered in key order.
pub fn voxel_components(voxels: &BTreeSet<Key>) -> BTreeMap<Key, usize> {
    let mut comp = BTreeMap::new();
    let mut next = 0;
    for &start in voxels {
        if comp.contains_key(&start) {
            continue;
        }
        comp.insert(start, next);
        let mut queue = VecDeque::from([start]);
        while let Some(k) = queue.pop_front() {
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        let nb = [k[0] + dx, k[1] + dy, k[2] + dz];
                        if voxels.contains(&nb) && !comp.contains_key(&nb) {
                            comp.insert(nb, next);
                            queue.push_back(nb);
                        }
                    }
                }
            }
        }
        next += 1;
    }
    comp
}

/// Voxels of the largest component touching the seed's own voxels.
pub fn target_component(voxels: &BTreeSet<Key>, seed: &BTreeSet<Key>) -> BTreeSet<Key> {
    let comp = voxel_components(voxels);
    let mut sizes: BTreeMap<usize, usize> = BTreeMap::new();
    for c in comp.values() {
        *sizes.entry(*c).or_default() += 1;
    }
    let touching: BTreeSet<usize> = seed.iter().filter_map(|k| comp.get(k).copied()).collect();
    let best = touching.iter().copied().max_by(|a, b| sizes[a].cmp(&sizes[b]).then(b.cmp(a)));
    match best {
        Some(c) => comp.iter().filter(|(_, &v)| v == c).map(|(k, _)| *k).collect(),
        None => BTreeSet::new(),
    }
}

/// Like [`crate::ingest::build_partitioned_cloud`], but foreground is every
/// point inside the largest 26-connected voxel component, over the union of
/// all `detections`, that overlaps the seed. Background still comes from
/// the seed view.
pub fn aggregate_votes(episode: &Episode, seed: &Detection, detections: &[&Detection], config: &CloudConfig) -> Result<LabeledCloud> {
    config.validate()?;
    let ref_to_manifest = resolve_reference(episode, seed, config.reference)?;
    let seed_vox = detection_voxels(episode, seed, config, &ref_to_manifest)?;
    let mut all = seed_vox.clone();
    for det in detections {
        all.extend(detection_voxels(episode, det, config, &ref_to_manifest)?);
    }
    let fg_vox = target_component(&all, &seed_vox);
    log::debug!("vote grid: {} voxels, target component {}", all.len(), fg_vox.len());

    let (_, bg) = seed_masks(seed, config.erode_radius, config.dilate_radius);
    let size = config.voxel_size;
    let (points, labels) = gather_points(episode, seed, config, |p| {
        if fg_vox.contains(&voxel_key(p.point.position(), size)) {
            Label::Foreground
        } else if p.source.view == seed.view_index && *bg.get(p.source.u, p.source.v) {
            Label::Background
        } else {
            Label::Unknown
        }
    })?;
    let cloud = voxelize(points, &labels, size, ref_to_manifest);
    if cloud.count(Label::Foreground) == 0 {
        return Err(Error::EmptyForeground);
    }
    if cloud.count(Label::Background) == 0 {
        return Err(Error::EmptyBackground);
    }
    Ok(cloud)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn components_use_26_connectivity() {
        let v: BTreeSet<Key> = [[0, 0, 0], [1, 1, 1], [5, 5, 5], [5, 5, 6], [5, 6, 6]].into_iter().collect();
        let comp = voxel_components(&v);
        assert_eq!(comp[&[0, 0, 0]], comp[&[1, 1, 1]]);
        assert_ne!(comp[&[0, 0, 0]], comp[&[5, 5, 5]]);
        let seed: BTreeSet<Key> = [[0, 0, 0]].into_iter().collect();
        assert_eq!(target_component(&v, &seed).len(), 2);
        let seed: BTreeSet<Key> = [[0, 0, 0], [5, 6, 6]].into_iter().collect();
        assert_eq!(target_component(&v, &seed).len(), 3);
        assert!(target_component(&v, &BTreeSet::new()).is_empty());
    }
}
