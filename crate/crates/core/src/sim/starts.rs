use super::car::StartConfig;
use super::track::Track;

pub const EDGE_CASE_COUNT: usize = 46;
pub const UNSEEN_START_COUNT: usize = 47;

fn cfg(tile: usize, lateral_offset: f64, heading_deg: f64, speed: f64) -> StartConfig {
    StartConfig { tile, lateral_offset, heading_offset: heading_deg.to_radians(), speed }
}

/// 23 harsh configurations: 18 from lateral {-0.3, 0, 0.3} × heading {-60°, 0, 60°}
/// × speed {0, 80}, then four single-axis perturbations at speed 40 and the plain
/// speed-40 start.
fn edge_grid(tile: usize) -> Vec<StartConfig> {
    let mut out = Vec::with_capacity(23);
    for speed in [0.0, 80.0] {
        for lat in [-0.3, 0.0, 0.3] {
            for head in [-60.0, 0.0, 60.0] {
                out.push(cfg(tile, lat, head, speed));
            }
        }
    }
    out.push(cfg(tile, -0.15, 0.0, 40.0));
    out.push(cfg(tile, 0.15, 0.0, 40.0));
    out.push(cfg(tile, 0.0, -30.0, 40.0));
    out.push(cfg(tile, 0.0, 30.0, 40.0));
    out.push(cfg(tile, 0.0, 0.0, 40.0));
    out
}

/// The 23-config edge grid pinned at the sharpest corner and at the straightest stretch.
pub fn edge_case_starts(track: &Track) -> Vec<StartConfig> {
    let mut out = edge_grid(track.corner_tile());
    out.extend(edge_grid(track.straight_tile()));
    out
}

/// Milder variations for unseen tracks: 24 at the straight tile (lateral {-0.15, -0.05,
/// 0.05, 0.15} × heading {-30°, 0, 30°} × speed {20, 60}), 16 at the corner tile
/// (lateral {-0.1, 0.1} × heading {-15°, 15°} × speed {0, 20, 40, 80}) and 7 centred
/// speed variations at tile 0.
pub fn unseen_battery_starts(track: &Track) -> Vec<StartConfig> {
    let (straight, corner) = (track.straight_tile(), track.corner_tile());
    let mut out = Vec::with_capacity(UNSEEN_START_COUNT);
    for speed in [20.0, 60.0] {
        for lat in [-0.15, -0.05, 0.05, 0.15] {
            for head in [-30.0, 0.0, 30.0] {
                out.push(cfg(straight, lat, head, speed));
            }
        }
    }
    for speed in [0.0, 20.0, 40.0, 80.0] {
        for lat in [-0.1, 0.1] {
            for head in [-15.0, 15.0] {
                out.push(cfg(corner, lat, head, speed));
            }
        }
    }
    for speed in [0.0, 10.0, 20.0, 40.0, 60.0, 70.0, 80.0] {
        out.push(cfg(0, 0.0, 0.0, speed));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::generate_track;
    use super::*;

    #[test]
    fn grid_counts_and_bounds() {
        let t = generate_track(5, 300).unwrap();
        let e = edge_case_starts(&t);
        let u = unseen_battery_starts(&t);
        assert_eq!(e.len(), EDGE_CASE_COUNT);
        assert_eq!(u.len(), UNSEEN_START_COUNT);
        for s in e.iter().chain(&u) {
            assert!(s.tile < t.len());
            assert!(s.lateral_offset.abs() <= 0.3 + 1e-12);
            assert!(s.heading_offset.abs() <= 60f64.to_radians() + 1e-12);
            assert!([0.0, 10.0, 20.0, 40.0, 60.0, 70.0, 80.0].contains(&s.speed));
        }
        assert!(e.iter().any(|s| s.lateral_offset == 0.3));
        assert!(e.iter().any(|s| s.lateral_offset == -0.3));
    }

    #[test]
    fn grids_are_deterministic() {
        let a = generate_track(5, 300).unwrap();
        let b = generate_track(5, 300).unwrap();
        assert_eq!(edge_case_starts(&a), edge_case_starts(&b));
        assert_eq!(unseen_battery_starts(&a), unseen_battery_starts(&b));
    }
}
