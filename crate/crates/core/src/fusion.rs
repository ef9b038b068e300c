//! Per-pixel scaled-dot-product attention over aligned pyramids, the
//! multi-scale decode, and the late-fusion baseline.

use crate::comm::Message;
use crate::error::{Error, Result};
use crate::grid::{relative_pose, warp_pyramid, Cell, FeatureLevel, FeaturePyramid, GridSpec, Pose, LEVELS};
use crate::par;
use crate::sensing::{suppress, Detection, REGRESSION_CHANNELS};

/// Pyramids of every participant in the ego frame, ordered by agent id.
/// The ego's own pyramid is always a member.
#[derive(Debug, Clone)]
pub struct AlignedNeighborSet {
    pub ego: u32,
    pub members: Vec<(u32, FeaturePyramid)>,
}

impl AlignedNeighborSet {
    pub fn ego_only(ego: u32, pyramid: FeaturePyramid) -> Self {
        AlignedNeighborSet {
            ego,
            members: vec![(ego, pyramid)],
        }
    }

    pub fn level(&self, l: usize) -> Vec<(u32, &FeatureLevel)> {
        self.members.iter().map(|(id, p)| (*id, &p.levels[l])).collect()
    }
}

/// Rebuild each message's sparse pyramid and warp it into the ego frame
/// using the (possibly perturbed) sender pose.
pub fn align_messages(
    ego: u32,
    ego_pyramid: &FeaturePyramid,
    ego_pose: &Pose,
    spec: &GridSpec,
    messages: &[Message],
) -> Result<AlignedNeighborSet> {
    let warped: Vec<Result<(u32, FeaturePyramid)>> = par::map_slice(messages, |m| {
        let sparse = m.to_pyramid(spec)?;
        let mut w = warp_pyramid(&sparse, &m.sender_pose, ego_pose, spec);
        rotate_regression(&mut w, m.sender_pose.yaw - ego_pose.yaw);
        reanchor_regression(&mut w, spec, &m.sender_pose, ego_pose);
        Ok((m.sender, w))
    });
    let mut members = vec![(ego, ego_pyramid.clone())];
    for w in warped {
        let (id, p) = w?;
        if id == ego {
            return Err(Error::Config(format!("agent {ego} received its own message")));
        }
        members.push((id, p));
    }
    members.sort_by_key(|(id, _)| *id);
    Ok(AlignedNeighborSet { ego, members })
}

/// Rotate the box offset and orientation channels of every `D`-block by
/// `yaw` so that warped features describe boxes in the receiver frame.
pub fn rotate_regression(p: &mut FeaturePyramid, yaw: f64) {
    let (sin, cos) = yaw.sin_cos();
    let d = p.base_channels;
    if (sin == 0.0 && cos == 1.0) || d < REGRESSION_CHANNELS {
        return;
    }
    let rot = |v: &mut [f32], i: usize| {
        let (x, y) = (v[i] as f64, v[i + 1] as f64);
        v[i] = (cos * x - sin * y) as f32;
        v[i + 1] = (sin * x + cos * y) as f32;
    };
    for lev in p.levels.iter_mut() {
        for (px, valid) in lev.data.chunks_mut(lev.channels).zip(&lev.valid) {
            if !valid {
                continue;
            }
            for block in px.chunks_mut(d) {
                let r = d - REGRESSION_CHANNELS;
                rot(block, r);
                rot(block, r + 4);
            }
        }
    }
}

/// Add `shift` to the box offset of one `D`-block. Offsets are relative to
/// the cell that encoded them; `shift` is that cell's center minus the new
/// anchor. It is scaled by the orientation norm so that diluted vectors
/// still reconstruct the same box.
fn shift_offsets(block: &mut [f32], shift: (f64, f64)) {
    let Some(r) = block.len().checked_sub(REGRESSION_CHANNELS) else {
        return;
    };
    let m = (block[r + 4] as f64).hypot(block[r + 5] as f64);
    block[r] = (block[r] as f64 + m * shift.0) as f32;
    block[r + 1] = (block[r + 1] as f64 + m * shift.1) as f32;
}

/// Re-anchor box offsets of a warped pyramid on the receiver cells they were
/// resampled into. Call after `rotate_regression`.
pub fn reanchor_regression(p: &mut FeaturePyramid, src_spec: &GridSpec, src_pose: &Pose, dst_pose: &Pose) {
    let rel = relative_pose(src_pose, dst_pose);
    let d = p.base_channels;
    let spec = p.spec;
    for (l, lev) in p.levels.iter_mut().enumerate() {
        let cols = lev.cols;
        for (i, (px, valid)) in lev.data.chunks_mut(lev.channels).zip(&lev.valid).enumerate() {
            if !valid {
                continue;
            }
            let c = spec.cell_center(l, Cell::new(i / cols, i % cols));
            let Some(sc) = src_spec.cell_of_local(l, rel.to_world(c)) else {
                continue;
            };
            let back = rel.to_local(src_spec.cell_center(l, sc));
            let shift = (back.0 - c.0, back.1 - c.1);
            if shift == (0.0, 0.0) {
                continue;
            }
            for block in px.chunks_mut(d) {
                shift_offsets(block, shift);
            }
        }
    }
}

/// Softmax of `⟨q, k_j⟩ / scale` over the keys.
pub fn attention_weights(query: &[f32], keys: &[&[f32]], scale: f64) -> Vec<f64> {
    let logits: Vec<f64> = keys
        .iter()
        .map(|k| {
            query
                .iter()
                .zip(k.iter())
                .map(|(a, b)| *a as f64 * *b as f64)
                .sum::<f64>()
                / scale
        })
        .collect();
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Fuse one level. Participants at a pixel are the members whose validity
/// bit is set there; the ego always participates, and a pixel the ego has to
/// itself keeps the ego vector unchanged.
pub fn attention_fuse_level(ego: u32, members: &[(u32, &FeatureLevel)]) -> Result<FeatureLevel> {
    let mut sorted: Vec<(u32, &FeatureLevel)> = members.to_vec();
    sorted.sort_by_key(|(id, _)| *id);
    let ego_pos = sorted
        .iter()
        .position(|(id, _)| *id == ego)
        .ok_or_else(|| Error::Config(format!("ego {ego} missing from fusion members")))?;
    let ego_lev = sorted[ego_pos].1;
    for (id, lev) in &sorted {
        if lev.rows != ego_lev.rows || lev.cols != ego_lev.cols || lev.channels != ego_lev.channels {
            return Err(Error::DimensionMismatch(format!("member {id} level shape")));
        }
    }
    let ch = ego_lev.channels;
    let scale = (ch as f64).sqrt();
    let mut out = ego_lev.clone();
    par::for_each_row(&mut out.data, ch, |i, px| {
        let keys: Vec<&[f32]> = sorted
            .iter()
            .enumerate()
            .filter(|(k, (_, lev))| *k == ego_pos || lev.valid[i])
            .map(|(_, (_, lev))| lev.vector(i))
            .collect();
        // A convex combination of equal vectors is that vector; skip the
        // rounding of Σ w·v.
        if keys.iter().all(|k| *k == keys[0]) {
            px.copy_from_slice(keys[0]);
            return;
        }
        let w = attention_weights(ego_lev.vector(i), &keys, scale);
        for (c, x) in px.iter_mut().enumerate() {
            *x = keys.iter().zip(&w).map(|(k, w)| w * k[c] as f64).sum::<f64>() as f32;
        }
    });
    Ok(out)
}

/// Fuse all three levels of an aligned set.
pub fn fuse(set: &AlignedNeighborSet) -> Result<FeaturePyramid> {
    let ego = set
        .members
        .iter()
        .find(|(id, _)| *id == set.ego)
        .map(|(_, p)| p)
        .ok_or_else(|| Error::Config("ego missing from aligned set".into()))?;
    let mut levels = Vec::with_capacity(LEVELS);
    for l in 0..LEVELS {
        levels.push(attention_fuse_level(set.ego, &set.level(l))?);
    }
    Ok(FeaturePyramid {
        spec: ego.spec,
        base_channels: ego.base_channels,
        levels,
    })
}

/// Upsample every level to level-0 resolution (nearest), keep its first `D`
/// channels and average the three maps. Coarse box offsets are re-anchored
/// from the parent cell center onto the level-0 cell.
pub fn decode_pyramid(p: &FeaturePyramid) -> Result<FeatureLevel> {
    p.check()?;
    let d = p.base_channels;
    let l0 = &p.levels[0];
    let mut out = FeatureLevel::zeros(l0.rows, l0.cols, d, true);
    let cols = l0.cols;
    let spec = p.spec;
    par::for_each_row(&mut out.data, d, |i, px| {
        let (r, c) = (i / cols, i % cols);
        let own = spec.cell_center(0, Cell::new(r, c));
        let srcs: Vec<Vec<f32>> = (0..LEVELS)
            .map(|l| {
                let lev = &p.levels[l];
                let parent = Cell::new(r >> l, c >> l);
                let mut v = lev.vector(parent.row * lev.cols + parent.col)[..d].to_vec();
                if l > 0 {
                    let pc = spec.cell_center(l, parent);
                    shift_offsets(&mut v, (pc.0 - own.0, pc.1 - own.1));
                }
                v
            })
            .collect();
        for (k, x) in px.iter_mut().enumerate() {
            let s: f64 = srcs.iter().map(|v| v[k] as f64).sum();
            *x = (s / LEVELS as f64) as f32;
        }
    });
    Ok(out)
}

/// Union of detections (all in the ego frame) deduplicated by class-wise
/// greedy NMS; equal scores keep the earlier list position, ego first.
pub fn late_fuse(ego: &[Detection], neighbors: &[Vec<Detection>], iou_threshold: f64) -> Vec<Detection> {
    let mut all: Vec<Detection> = ego.to_vec();
    for n in neighbors {
        all.extend_from_slice(n);
    }
    all.sort_by(|a, b| b.score.total_cmp(&a.score));
    suppress(all, iou_threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comm::{pack_message, pool_masks, RequestMap, SelectionMask};
    use crate::geometry::{ObjectClass, OrientedBox};
    use crate::sensing::build_pyramid;

    fn level(rows: usize, cols: usize, ch: usize, f: impl Fn(usize) -> f32) -> FeatureLevel {
        let mut l = FeatureLevel::zeros(rows, cols, ch, true);
        for (i, x) in l.data.iter_mut().enumerate() {
            *x = f(i);
        }
        l
    }

    #[test]
    fn hand_softmax() {
        let ego = level(1, 1, 2, |i| [1.0, 0.0][i]);
        let nb = level(1, 1, 2, |i| [0.0, 1.0][i]);
        let out = attention_fuse_level(0, &[(0, &ego), (1, &nb)]).unwrap();
        let w0 = 1.0 / (1.0 + (-(0.5f64.sqrt())).exp());
        assert!((out.data[0] as f64 - w0).abs() < 1e-6);
        assert!((out.data[1] as f64 - (1.0 - w0)).abs() < 1e-6);
        assert!((w0 - 0.6698).abs() < 1e-4);
    }

    #[test]
    fn ego_only_and_identical_participants() {
        let ego = level(2, 2, 4, |i| i as f32 * 0.1);
        let out = attention_fuse_level(0, &[(0, &ego)]).unwrap();
        assert_eq!(out, ego);
        let twin = ego.clone();
        let out = attention_fuse_level(0, &[(0, &ego), (5, &twin)]).unwrap();
        assert_eq!(out.data, ego.data);
    }

    #[test]
    fn invalid_neighbor_cells_are_excluded() {
        let ego = level(1, 2, 2, |_| 1.0);
        let mut nb = level(1, 2, 2, |_| 0.0);
        nb.valid[1] = false;
        let out = attention_fuse_level(0, &[(0, &ego), (1, &nb)]).unwrap();
        assert!(out.data[0] < 1.0);
        assert_eq!(&out.data[2..], &[1.0, 1.0]);
    }

    #[test]
    fn decode_examples() {
        let spec = GridSpec::new(0.0, 4.0, 0.0, 4.0, 0.5).unwrap();
        // Constant patch: pooling and duplication reproduce level 0 exactly.
        let flat = level(8, 8, 4, |i| [0.5, -0.25, 0.125, 1.0][i % 4]);
        let p = build_pyramid(spec, flat.clone());
        assert_eq!(decode_pyramid(&p).unwrap().data, flat.data);
        let z = FeaturePyramid::zeros(spec, 4, true);
        assert!(decode_pyramid(&z).unwrap().data.iter().all(|x| *x == 0.0));
        let mut p = FeaturePyramid::zeros(spec, 4, true);
        for x in p.levels[1].data.iter_mut() {
            *x = 0.9;
        }
        let d = decode_pyramid(&p).unwrap();
        assert!(d.data.iter().all(|x| (*x - 0.3).abs() < 1e-7));
    }

    #[test]
    fn late_fuse_examples() {
        let a = Detection {
            bbox: OrientedBox::new(0.0, 0.0, 2.0, 4.5, 0.0, ObjectClass::Vehicle),
            score: 0.9,
        };
        let b = Detection {
            bbox: OrientedBox::new(20.0, 0.0, 2.0, 4.5, 0.0, ObjectClass::Vehicle),
            score: 0.6,
        };
        assert_eq!(late_fuse(&[a], &[vec![b]], 0.15).len(), 2);
        let twin = Detection { score: 0.5, ..a };
        let got = late_fuse(&[twin], &[vec![a]], 0.15);
        assert_eq!(got, vec![a]);
        // Shifted 1.6 m along a 4.5 m box: IoU = 2.9/6.1 ≈ 0.475.
        let near = Detection {
            bbox: OrientedBox::new(1.6, 0.0, 2.0, 4.5, 0.0, ObjectClass::Vehicle),
            score: 0.4,
        };
        assert_eq!(late_fuse(&[a], &[vec![near]], 0.15).len(), 1);
    }

    #[test]
    fn regression_channels_follow_the_frame() {
        let spec = GridSpec::new(0.0, 2.0, 0.0, 2.0, 0.5).unwrap();
        let mut l0 = FeatureLevel::zeros(4, 4, 8, true);
        l0.vector_mut(5)[2..].copy_from_slice(&[0.2, -0.1, 2.0, 4.5, 1.0, 0.0]);
        let mut p = build_pyramid(spec, l0);
        rotate_regression(&mut p, std::f64::consts::FRAC_PI_2);
        let v = p.levels[0].vector(5);
        let want = [0.1, 0.2, 2.0, 4.5, 0.0, 1.0];
        assert!(v[2..].iter().zip(want).all(|(a, b)| (*a as f64 - b).abs() < 1e-6));
        let coarse = p.levels[1].vector(0);
        assert!((coarse[7] - 0.25).abs() < 1e-6 && (coarse[15] - 0.25).abs() < 1e-6);
    }

    #[test]
    fn align_examples() {
        let spec = GridSpec::new(0.0, 4.0, -2.0, 2.0, 0.5).unwrap();
        let ego_p = build_pyramid(spec, level(8, 8, 4, |_| 0.1));
        let set = align_messages(0, &ego_p, &Pose::identity(), &spec, &[]).unwrap();
        assert_eq!(set.members.len(), 1);

        let src = build_pyramid(spec, level(8, 8, 4, |i| (i / 4) as f32));
        let mut mask = SelectionMask::empty(8, 8);
        mask.bits[9] = true;
        mask.bits[30] = true;
        let masks = pool_masks(mask).unwrap();
        let msg = pack_message(&src, &masks, 3, Pose::identity(), &RequestMap::empty(spec), 0).unwrap();
        let set = align_messages(0, &ego_p, &Pose::identity(), &spec, &[msg.clone()]).unwrap();
        assert_eq!(set.members[1].1, msg.to_pyramid(&spec).unwrap());

        // Sender one cell ahead of the ego.
        let shifted = Message {
            sender_pose: Pose::new(0.5, 0.0, 0.0),
            ..msg
        };
        let set = align_messages(0, &ego_p, &Pose::identity(), &spec, &[shifted]).unwrap();
        let got = &set.members[1].1.levels[0];
        assert!(got.valid[9 + 8] && !got.valid[9]);
        assert_eq!(got.vector(17), src.levels[0].vector(9));
    }

    /// A clean 2×4 m box aligned to level-2 cells, encoded with offsets
    /// relative to each level-0 cell.
    fn clean_box_pyramid(spec: GridSpec, center: (f64, f64)) -> (FeaturePyramid, Vec<usize>) {
        let cols = spec.cols();
        let mut l0 = FeatureLevel::zeros(spec.rows(), cols, 8, true);
        let mut cells = Vec::new();
        for i in 0..spec.cells() {
            let c = spec.cell_center(0, Cell::new(i / cols, i % cols));
            if (c.0 - center.0).abs() < 2.0 && (c.1 - center.1).abs() < 1.0 {
                let reg = [center.0 - c.0, center.1 - c.1, 2.0, 4.0, 1.0, 0.0];
                l0.vector_mut(i)[2..].copy_from_slice(&reg.map(|x| x as f32));
                cells.push(i);
            }
        }
        (build_pyramid(spec, l0), cells)
    }

    fn decoded_centers(p: &FeaturePyramid, cells: &[usize]) -> Vec<(f64, f64)> {
        let f = decode_pyramid(p).unwrap();
        let cols = p.spec.cols();
        cells
            .iter()
            .map(|&i| {
                let v = f.vector(i);
                let reg: [f64; 6] = std::array::from_fn(|k| v[2 + k] as f64);
                let b = crate::sensing::reconstruct_box(&p.spec, Cell::new(i / cols, i % cols), &reg, ObjectClass::Vehicle)
                    .unwrap();
                (b.cx, b.cy)
            })
            .collect()
    }

    #[test]
    fn decode_keeps_clean_box_offsets() {
        let spec = GridSpec::new(0.0, 8.0, 0.0, 8.0, 0.5).unwrap();
        let (p, cells) = clean_box_pyramid(spec, (4.0, 3.0));
        assert_eq!(cells.len(), 32);
        for c in decoded_centers(&p, &cells) {
            assert!((c.0 - 4.0).abs() < 1e-5 && (c.1 - 3.0).abs() < 1e-5, "{c:?}");
        }
    }

    #[test]
    fn warped_offsets_point_at_the_same_box() {
        let spec = GridSpec::new(0.0, 8.0, 0.0, 8.0, 0.5).unwrap();
        let (p, cells) = clean_box_pyramid(spec, (4.0, 3.0));
        // Receiver 0.3 m ahead and 0.2 m left of the sender: every cell
        // resamples from a neighbour whose center is off by a fraction.
        let sender = Pose::identity();
        let ego = Pose::new(0.3, 0.2, 0.0);
        let mut w = warp_pyramid(&p, &sender, &ego, &spec);
        rotate_regression(&mut w, sender.yaw - ego.yaw);
        reanchor_regression(&mut w, &spec, &sender, &ego);
        let f = decode_pyramid(&w).unwrap();
        let cols = spec.cols();
        let interior: Vec<usize> = (0..spec.cells())
            .filter(|&i| {
                let c = spec.cell_center(0, Cell::new(i / cols, i % cols));
                let c = ego.to_world(c);
                (c.0 - 4.0).abs() < 1.0 && (c.1 - 3.0).abs() < 0.25 && f.vector(i)[6] > 0.9
            })
            .collect();
        assert!(!interior.is_empty());
        for (i, c) in interior.iter().zip(decoded_centers(&w, &interior)) {
            assert!((c.0 - 3.7).abs() < 1e-5 && (c.1 - 2.8).abs() < 1e-5, "cell {i}: {c:?}");
        }
    }
}
