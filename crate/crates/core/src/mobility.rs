//! Random waypoint movement on a rectangular terrain and unit-disk
//! neighbourhoods.

use rand::Rng;
use thiserror::Error;

use crate::engine::{RngStream, SimTime};
use crate::packet::NodeId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MobilityError {
    #[error("terrain dimensions must be positive, got {width} x {height}")]
    Terrain { width: f64, height: f64 },
    #[error("communication range must be positive, got {0}")]
    Range(f64),
    #[error("at least 2 nodes are required, got {0}")]
    TooFewNodes(usize),
    #[error("maximum speed must be finite and non-negative, got {0}")]
    Speed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Terrain {
    pub width: f64,
    pub height: f64,
}

impl Default for Terrain {
    fn default() -> Self {
        Terrain {
            width: 500.0,
            height: 550.0,
        }
    }
}

impl Terrain {
    pub fn new(width: f64, height: f64) -> Result<Self, MobilityError> {
        if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
            return Err(MobilityError::Terrain { width, height });
        }
        Ok(Terrain { width, height })
    }

    pub fn contains(&self, p: Position) -> bool {
        (0.0..=self.width).contains(&p.x) && (0.0..=self.height).contains(&p.y)
    }

    pub fn clamp(&self, p: Position) -> Position {
        Position {
            x: p.x.clamp(0.0, self.width),
            y: p.y.clamp(0.0, self.height),
        }
    }

    pub fn random_position(&self, rng: &mut RngStream) -> Position {
        Position {
            x: rng.gen_range(0.0..=self.width),
            y: rng.gen_range(0.0..=self.height),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Position { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Unit-disk radius in metres.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CommRange(f64);

impl CommRange {
    pub fn new(radius: f64) -> Result<Self, MobilityError> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(MobilityError::Range(radius));
        }
        Ok(CommRange(radius))
    }

    pub fn radius(self) -> f64 {
        self.0
    }

    /// Inclusive: a pair exactly `radius` apart is connected.
    pub fn connects(self, a: &Position, b: &Position) -> bool {
        a.distance(b) <= self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WaypointParams {
    pub speed_max: f64,
    pub pause: SimTime,
}

impl Default for WaypointParams {
    fn default() -> Self {
        WaypointParams {
            speed_max: 20.0,
            pause: SimTime::ZERO,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WaypointState {
    pub current: Position,
    pub target: Position,
    /// Metres per second. A speed of zero is kept for the whole run.
    pub speed: f64,
    pub pause_until: SimTime,
}

impl WaypointState {
    /// A node that never moves.
    pub fn fixed(at: Position) -> Self {
        WaypointState {
            current: at,
            target: at,
            speed: 0.0,
            pause_until: SimTime::ZERO,
        }
    }
}

fn draw_speed(params: &WaypointParams, rng: &mut RngStream) -> f64 {
    if params.speed_max > 0.0 {
        rng.gen_range(0.0..=params.speed_max)
    } else {
        0.0
    }
}

/// Places `n` nodes uniformly on the terrain, each with a first waypoint and
/// a speed drawn from `[0, speed_max]`.
pub fn init_positions(
    n: usize,
    terrain: &Terrain,
    params: &WaypointParams,
    rng: &mut RngStream,
) -> Result<Vec<WaypointState>, MobilityError> {
    if n < 2 {
        return Err(MobilityError::TooFewNodes(n));
    }
    if !(params.speed_max >= 0.0 && params.speed_max.is_finite()) {
        return Err(MobilityError::Speed(params.speed_max));
    }
    Ok((0..n)
        .map(|_| {
            let current = terrain.random_position(rng);
            let target = terrain.random_position(rng);
            let speed = draw_speed(params, rng);
            WaypointState {
                current,
                target,
                speed,
                pause_until: SimTime::ZERO,
            }
        })
        .collect())
}

/// Moves a node from `now` to `now + dt`. Arrival snaps to the waypoint,
/// waits out the pause, then draws a new waypoint and speed.
pub fn advance(
    state: &WaypointState,
    now: SimTime,
    dt: SimTime,
    terrain: &Terrain,
    params: &WaypointParams,
    rng: &mut RngStream,
) -> WaypointState {
    let mut s = *state;
    if s.speed <= 0.0 {
        return s;
    }
    let mut t = now.as_secs_f64();
    let end = (now + dt).as_secs_f64();
    // Bounded so a degenerate run of zero-length legs cannot spin forever.
    for _ in 0..64 {
        let resume = s.pause_until.as_secs_f64();
        if resume > t {
            t = resume.min(end);
        }
        if t >= end {
            break;
        }
        let dist = s.current.distance(&s.target);
        let reach = s.speed * (end - t);
        if reach >= dist {
            t += dist / s.speed;
            s.current = s.target;
            s.pause_until = SimTime::from_secs_f64(t) + params.pause;
            s.target = terrain.random_position(rng);
            s.speed = draw_speed(params, rng);
            if s.speed <= 0.0 {
                break;
            }
        } else {
            let f = reach / dist;
            s.current = terrain.clamp(Position {
                x: s.current.x + (s.target.x - s.current.x) * f,
                y: s.current.y + (s.target.y - s.current.y) * f,
            });
            break;
        }
    }
    s
}

/// Every other node within range of `node`, in id order.
pub fn neighbors(node: NodeId, positions: &[Position], range: CommRange) -> Vec<NodeId> {
    let me = positions[node.index()];
    positions
        .iter()
        .enumerate()
        .filter(|&(j, p)| j != node.index() && range.connects(&me, p))
        .map(|(j, _)| NodeId::from(j))
        .collect()
}

/// Neighbour lists for all nodes of a snapshot.
pub fn neighbor_table(positions: &[Position], range: CommRange) -> Vec<Vec<NodeId>> {
    let n = positions.len();
    let mut table = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            if range.connects(&positions[i], &positions[j]) {
                table[i].push(NodeId::from(j));
                table[j].push(NodeId::from(i));
            }
        }
    }
    for row in &mut table {
        row.sort_unstable();
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{rng_stream, StreamId};

    fn rng() -> RngStream {
        rng_stream(42, StreamId::Mobility)
    }

    #[test]
    fn init_rejects_single_node() {
        let r = init_positions(
            1,
            &Terrain::default(),
            &WaypointParams::default(),
            &mut rng(),
        );
        assert_eq!(r, Err(MobilityError::TooFewNodes(1)));
    }

    #[test]
    fn init_is_reproducible_and_in_bounds() {
        let t = Terrain::default();
        let a = init_positions(30, &t, &WaypointParams::default(), &mut rng()).unwrap();
        let b = init_positions(30, &t, &WaypointParams::default(), &mut rng()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 30);
        for s in &a {
            assert!(t.contains(s.current) && t.contains(s.target));
            assert!((0.0..=20.0).contains(&s.speed));
        }
    }

    #[test]
    fn zero_speed_never_moves() {
        let s = WaypointState {
            current: Position::new(10.0, 10.0),
            target: Position::new(100.0, 100.0),
            speed: 0.0,
            pause_until: SimTime::ZERO,
        };
        let mut r = rng();
        let out = advance(
            &s,
            SimTime::ZERO,
            SimTime::from_secs(1000),
            &Terrain::default(),
            &WaypointParams::default(),
            &mut r,
        );
        assert_eq!(out, s);
    }

    #[test]
    fn exact_arrival_lands_on_target() {
        let s = WaypointState {
            current: Position::new(0.0, 0.0),
            target: Position::new(3.0, 4.0),
            speed: 5.0,
            pause_until: SimTime::ZERO,
        };
        let out = advance(
            &s,
            SimTime::ZERO,
            SimTime::from_secs(1),
            &Terrain::default(),
            &WaypointParams::default(),
            &mut rng(),
        );
        assert_eq!(out.current, Position::new(3.0, 4.0));
        assert_eq!(out.pause_until, SimTime::from_secs(1));
    }

    #[test]
    fn pause_then_new_leg() {
        // Arrive at t=1, pause 2 s, then a fresh waypoint from the stream.
        let params = WaypointParams {
            speed_max: 20.0,
            pause: SimTime::from_secs(2),
        };
        let s = WaypointState {
            current: Position::new(0.0, 0.0),
            target: Position::new(3.0, 4.0),
            speed: 5.0,
            pause_until: SimTime::ZERO,
        };
        let t = Terrain::default();
        let mut r = rng();
        let mid = advance(
            &s,
            SimTime::ZERO,
            SimTime::from_secs(2),
            &t,
            &params,
            &mut r,
        );
        assert_eq!(mid.current, Position::new(3.0, 4.0));
        assert_eq!(mid.pause_until, SimTime::from_secs(3));

        // The same draws, replayed by hand.
        let mut oracle = rng();
        let target = t.random_position(&mut oracle);
        let speed = oracle.gen_range(0.0..=20.0);
        assert_eq!(mid.target, target);
        assert_eq!(mid.speed, speed);

        let end = advance(
            &mid,
            SimTime::from_secs(2),
            SimTime::from_secs(2),
            &t,
            &params,
            &mut r,
        );
        assert!(t.contains(end.current));
        // One second of travel after the pause ends at t=3.
        let leg = Position::new(3.0, 4.0).distance(&target);
        if speed < leg {
            let moved = Position::new(3.0, 4.0).distance(&end.current);
            assert!((moved - speed).abs() < 1e-9);
            assert_eq!(end.target, target);
        }
    }

    #[test]
    fn boundary_distance_is_connected() {
        let pos = [
            Position::new(0.0, 0.0),
            Position::new(100.0, 0.0),
            Position::new(250.0, 0.0),
        ];
        let range = CommRange::new(100.0).unwrap();
        assert_eq!(neighbors(NodeId(0), &pos, range), vec![NodeId(1)]);
        assert!(neighbors(NodeId(2), &pos, range).is_empty());
        assert_eq!(neighbor_table(&pos, range)[1], vec![NodeId(0)]);
    }

    #[test]
    fn invalid_range_and_terrain() {
        assert!(CommRange::new(0.0).is_err());
        assert!(Terrain::new(-1.0, 10.0).is_err());
    }
}
