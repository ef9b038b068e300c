//! Sparse feature messages and their little-endian wire layout.
//!
//! ```text
//! header   u32 version | u32 sender | u64 send_step | f64 x | f64 y | f64 yaw
//!          | u32 D | u32 rows0 | u32 cols0
//! level l  u32 count | count × (u32 row-major index | f32 × 2^l·D)
//! request  u32 rows | u32 cols | f64 sigma | f32 × rows·cols
//! ```

use crate::error::{Error, Result};
use crate::grid::{FeaturePyramid, GridSpec, Pose, ScalarGrid, LEVELS};
use crate::sensing::Detection;

use super::{RequestMap, SelectionMaskPyramid};

pub const WIRE_VERSION: u32 = 1;

/// Selected cells of one level: ascending row-major indices and their
/// vectors, concatenated.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LevelPayload {
    pub indices: Vec<u32>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub sender: u32,
    pub send_step: u64,
    pub sender_pose: Pose,
    pub base_channels: usize,
    pub rows0: usize,
    pub cols0: usize,
    pub levels: Vec<LevelPayload>,
    /// Sender's own request map, stored at wire (f32) precision.
    pub request_map: RequestMap,
}

impl Message {
    /// Bytes of transmitted feature elements; request maps are metadata.
    pub fn payload_bytes(&self) -> u64 {
        self.levels.iter().map(|l| l.data.len() as u64 * 4).sum()
    }

    pub fn selected_cells(&self) -> usize {
        self.levels.first().map_or(0, |l| l.indices.len())
    }

    /// Dense pyramid with only the transmitted cells valid.
    pub fn to_pyramid(&self, spec: &GridSpec) -> Result<FeaturePyramid> {
        if spec.rows() != self.rows0 || spec.cols() != self.cols0 {
            return Err(Error::DimensionMismatch(format!(
                "message grid {}x{} vs receiver {}x{}",
                self.rows0,
                self.cols0,
                spec.rows(),
                spec.cols()
            )));
        }
        let mut p = FeaturePyramid::zeros(*spec, self.base_channels, false);
        for (lev, payload) in p.levels.iter_mut().zip(&self.levels) {
            let ch = lev.channels;
            for (k, &idx) in payload.indices.iter().enumerate() {
                let idx = idx as usize;
                lev.vector_mut(idx).copy_from_slice(&payload.data[k * ch..(k + 1) * ch]);
                lev.valid[idx] = true;
            }
        }
        Ok(p)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.payload_bytes() as usize);
        put_u32(&mut out, WIRE_VERSION);
        put_u32(&mut out, self.sender);
        out.extend_from_slice(&self.send_step.to_le_bytes());
        for v in [self.sender_pose.x, self.sender_pose.y, self.sender_pose.yaw] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        put_u32(&mut out, self.base_channels as u32);
        put_u32(&mut out, self.rows0 as u32);
        put_u32(&mut out, self.cols0 as u32);
        for (l, lev) in self.levels.iter().enumerate() {
            let ch = self.base_channels << l;
            put_u32(&mut out, lev.indices.len() as u32);
            for (k, idx) in lev.indices.iter().enumerate() {
                put_u32(&mut out, *idx);
                for v in &lev.data[k * ch..(k + 1) * ch] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let r = &self.request_map.grid;
        put_u32(&mut out, r.rows as u32);
        put_u32(&mut out, r.cols as u32);
        out.extend_from_slice(&self.request_map.sigma_m.to_le_bytes());
        for v in &r.values {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    /// Inverse of [`Message::to_bytes`]; the grid spec supplies the geometry
    /// the wire format leaves implicit.
    pub fn from_bytes(bytes: &[u8], spec: &GridSpec) -> Result<Message> {
        let mut r = Reader { bytes, pos: 0 };
        let version = r.u32()?;
        if version != WIRE_VERSION {
            return Err(Error::Wire(format!("unsupported version {version}")));
        }
        let sender = r.u32()?;
        let send_step = u64::from_le_bytes(r.take::<8>()?);
        let x = r.f64()?;
        let y = r.f64()?;
        let yaw = r.f64()?;
        let base_channels = r.u32()? as usize;
        let rows0 = r.u32()? as usize;
        let cols0 = r.u32()? as usize;
        if rows0 != spec.rows() || cols0 != spec.cols() || base_channels == 0 {
            return Err(Error::Wire("grid header does not match the receiver grid".into()));
        }
        let mut levels = Vec::with_capacity(LEVELS);
        for l in 0..LEVELS {
            let ch = base_channels << l;
            let cells = spec.rows_at(l) * spec.cols_at(l);
            let count = r.u32()? as usize;
            if count > cells {
                return Err(Error::Wire(format!("level {l} claims {count} cells")));
            }
            let mut lev = LevelPayload {
                indices: Vec::with_capacity(count),
                data: Vec::with_capacity(count * ch),
            };
            for _ in 0..count {
                let idx = r.u32()?;
                if idx as usize >= cells || lev.indices.last().is_some_and(|p| *p >= idx) {
                    return Err(Error::Wire(format!("bad index {idx} on level {l}")));
                }
                lev.indices.push(idx);
                for _ in 0..ch {
                    lev.data.push(f32::from_le_bytes(r.take::<4>()?));
                }
            }
            levels.push(lev);
        }
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        if rows != rows0 || cols != cols0 {
            return Err(Error::Wire("request map size mismatch".into()));
        }
        let sigma_m = r.f64()?;
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            values.push(f32::from_le_bytes(r.take::<4>()?) as f64);
        }
        if r.pos != bytes.len() {
            return Err(Error::Wire(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Message {
            sender,
            send_step,
            sender_pose: Pose { x, y, yaw },
            base_channels,
            rows0,
            cols0,
            levels,
            request_map: RequestMap {
                grid: ScalarGrid::from_values(*spec, 0, values)?,
                sigma_m,
            },
        })
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let s = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::Wire(format!("truncated at byte {}", self.pos)))?;
        self.pos = end;
        Ok(s.try_into().expect("slice of length N"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take::<4>()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take::<8>()?))
    }
}

/// Gather the masked cells of a pyramid into a message.
pub fn pack_message(
    pyramid: &FeaturePyramid,
    masks: &SelectionMaskPyramid,
    sender: u32,
    sender_pose: Pose,
    own_request: &RequestMap,
    step: u64,
) -> Result<Message> {
    if masks.levels.len() != pyramid.levels.len() {
        return Err(Error::DimensionMismatch("mask and pyramid level counts differ".into()));
    }
    let mut levels = Vec::with_capacity(LEVELS);
    for (lev, mask) in pyramid.levels.iter().zip(&masks.levels) {
        if lev.rows != mask.rows || lev.cols != mask.cols {
            return Err(Error::DimensionMismatch(format!(
                "mask {}x{} vs level {}x{}",
                mask.rows, mask.cols, lev.rows, lev.cols
            )));
        }
        let mut p = LevelPayload::default();
        for i in mask.indices() {
            p.indices.push(i as u32);
            p.data.extend_from_slice(lev.vector(i));
        }
        levels.push(p);
    }
    let mut request = own_request.clone();
    for v in &mut request.grid.values {
        *v = *v as f32 as f64;
    }
    Ok(Message {
        sender,
        send_step: step,
        sender_pose,
        base_channels: pyramid.base_channels,
        rows0: pyramid.spec.rows(),
        cols0: pyramid.spec.cols(),
        levels,
        request_map: request,
    })
}

/// Late-fusion payload: detections in the sender's frame.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionMessage {
    pub sender: u32,
    pub send_step: u64,
    pub sender_pose: Pose,
    pub detections: Vec<Detection>,
}

impl DetectionMessage {
    /// Seven f32 box/score fields plus a u32 class per detection.
    pub const BYTES_PER_DETECTION: u64 = 32;

    /// Detections re-expressed in `ego`'s frame.
    pub fn in_frame(&self, ego: &Pose) -> Vec<Detection> {
        let rel = crate::grid::relative_pose(ego, &self.sender_pose);
        self.detections
            .iter()
            .map(|d| Detection {
                bbox: d.bbox.from_frame(&rel),
                score: d.score,
            })
            .collect()
    }
}
