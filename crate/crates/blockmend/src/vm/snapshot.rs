//! Low-resolution stage rasterization used as multimodal evidence.
//!
//! Equal states produce byte-identical images; the byte size of every
//! snapshot is exact so payload audits can account for it.

use serde::Serialize;

use crate::vm::interp::{VmState, STAGE_X_MAX, STAGE_Y_MAX};

pub const SNAPSHOT_WIDTH: u32 = 120;
pub const SNAPSHOT_HEIGHT: u32 = 90;
const SPRITE_SIZE: i64 = 8;

/// RGB raster of the stage plus its binary PPM ("P6") encoding.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageSnapshot {
    pub width: u32,
    pub height: u32,
    #[serde(skip)]
    pub pixels: Vec<u8>,
    #[serde(skip)]
    pub encoded: Vec<u8>,
    pub tick: u64,
}

impl StageSnapshot {
    pub fn encoded_len(&self) -> usize {
        self.encoded.len()
    }
}

/// Rasterizes a state at 120×90: white background, each visible sprite an
/// 8×8 filled square at its scaled position, colored by a stable hash of
/// the sprite name. Sprites draw in name order, later names on top.
pub fn capture_snapshot(state: &VmState) -> StageSnapshot {
    let (w, h) = (SNAPSHOT_WIDTH as i64, SNAPSHOT_HEIGHT as i64);
    let mut pixels = vec![0xFFu8; (w * h * 3) as usize];
    for (name, sprite) in &state.sprites {
        if !sprite.visible {
            continue;
        }
        let cx = ((sprite.x + STAGE_X_MAX) * w as f64 / (2.0 * STAGE_X_MAX)).round() as i64;
        let cy = ((STAGE_Y_MAX - sprite.y) * h as f64 / (2.0 * STAGE_Y_MAX)).round() as i64;
        let color = sprite_color(name);
        for dy in -(SPRITE_SIZE / 2)..(SPRITE_SIZE / 2) {
            for dx in -(SPRITE_SIZE / 2)..(SPRITE_SIZE / 2) {
                let (px, py) = (cx + dx, cy + dy);
                if px < 0 || px >= w || py < 0 || py >= h {
                    continue;
                }
                let i = ((py * w + px) * 3) as usize;
                pixels[i..i + 3].copy_from_slice(&color);
            }
        }
    }
    let encoded = encode_ppm(SNAPSHOT_WIDTH, SNAPSHOT_HEIGHT, &pixels);
    StageSnapshot { width: SNAPSHOT_WIDTH, height: SNAPSHOT_HEIGHT, pixels, encoded, tick: state.tick }
}

fn sprite_color(name: &str) -> [u8; 3] {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    // channels capped below 232 so sprites never blend into the background
    [32 + (h & 0xC7) as u8, 32 + ((h >> 8) & 0xC7) as u8, 32 + ((h >> 16) & 0xC7) as u8]
}

pub fn encode_ppm(width: u32, height: u32, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Parses a binary PPM produced by [`encode_ppm`].
pub fn decode_ppm(bytes: &[u8]) -> Option<(u32, u32, Vec<u8>)> {
    let mut parts = bytes.splitn(4, |b| *b == b'\n');
    let magic = parts.next()?;
    if magic != b"P6" {
        return None;
    }
    let dims = std::str::from_utf8(parts.next()?).ok()?;
    let (w, h) = dims.split_once(' ')?;
    let (w, h) = (w.parse::<u32>().ok()?, h.parse::<u32>().ok()?);
    if parts.next()? != b"255" {
        return None;
    }
    let body = parts.next()?;
    if body.len() != (w * h * 3) as usize {
        return None;
    }
    Some((w, h, body.to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vm::interp::SpriteState;
    use std::collections::BTreeMap;

    fn empty_state() -> VmState {
        VmState {
            tick: 0,
            sprites: BTreeMap::new(),
            variables: BTreeMap::new(),
            pending_broadcasts: Vec::new(),
            rng_state: 0,
        }
    }

    #[test]
    fn empty_stage_is_white_with_exact_size() {
        let snap = capture_snapshot(&empty_state());
        assert!(snap.pixels.iter().all(|b| *b == 0xFF));
        let header = format!("P6\n{SNAPSHOT_WIDTH} {SNAPSHOT_HEIGHT}\n255\n").len();
        assert_eq!(snap.encoded_len(), header + 120 * 90 * 3);
        assert_eq!(snap.encoded_len(), header + 32_400);
    }

    #[test]
    fn origin_sprite_centers_at_60_45() {
        let mut state = empty_state();
        state.sprites.insert(
            "Cat".into(),
            SpriteState { x: 0.0, y: 0.0, direction: 90.0, costume_index: 0, visible: true },
        );
        let snap = capture_snapshot(&state);
        let at = |x: i64, y: i64| {
            let i = ((y * 120 + x) * 3) as usize;
            [snap.pixels[i], snap.pixels[i + 1], snap.pixels[i + 2]]
        };
        assert_ne!(at(60, 45), [0xFF, 0xFF, 0xFF]);
        assert_ne!(at(56, 41), [0xFF, 0xFF, 0xFF]);
        assert_eq!(at(65, 45), [0xFF, 0xFF, 0xFF]);
        assert_eq!(at(60, 50), [0xFF, 0xFF, 0xFF]);
    }

    #[test]
    fn hidden_sprites_are_not_drawn() {
        let mut state = empty_state();
        state.sprites.insert(
            "Cat".into(),
            SpriteState { x: 0.0, y: 0.0, direction: 90.0, costume_index: 0, visible: false },
        );
        let snap = capture_snapshot(&state);
        assert!(snap.pixels.iter().all(|b| *b == 0xFF));
    }

    #[test]
    fn equal_states_encode_identically() {
        let mut state = empty_state();
        state.sprites.insert(
            "Dog".into(),
            SpriteState { x: -100.0, y: 50.0, direction: 0.0, costume_index: 1, visible: true },
        );
        assert_eq!(capture_snapshot(&state).encoded, capture_snapshot(&state).encoded);
    }

    #[test]
    fn ppm_round_trip() {
        let snap = capture_snapshot(&empty_state());
        let (w, h, body) = decode_ppm(&snap.encoded).unwrap();
        assert_eq!((w, h), (SNAPSHOT_WIDTH, SNAPSHOT_HEIGHT));
        assert_eq!(body, snap.pixels);
    }
}
