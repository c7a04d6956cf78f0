//! Junction geometry and reference paths: entry straight, quarter-circle
//! turn, exit straight, traversed at constant speed.

use std::f64::consts::FRAC_PI_2;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::ScenarioError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    East,
    North,
    West,
    South,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::East, Arm::North, Arm::West, Arm::South];

    /// Unit vector from the junction centre along the arm.
    pub fn outward(self) -> [f64; 2] {
        match self {
            Arm::East => [1.0, 0.0],
            Arm::North => [0.0, 1.0],
            Arm::West => [-1.0, 0.0],
            Arm::South => [0.0, -1.0],
        }
    }

    /// Heading of a vehicle driving in towards the centre.
    pub fn inbound_heading(self) -> f64 {
        match self {
            Arm::East => std::f64::consts::PI,
            Arm::North => -FRAC_PI_2,
            Arm::West => 0.0,
            Arm::South => FRAC_PI_2,
        }
    }

    fn from_outward(d: [f64; 2]) -> Arm {
        if d[0] > 0.5 {
            Arm::East
        } else if d[0] < -0.5 {
            Arm::West
        } else if d[1] > 0.5 {
            Arm::North
        } else {
            Arm::South
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Maneuver {
    Left,
    Right,
    Straight,
}

impl Maneuver {
    /// +1 for counter-clockwise turns.
    fn turn_sign(self) -> f64 {
        match self {
            Maneuver::Left => 1.0,
            Maneuver::Right => -1.0,
            Maneuver::Straight => 0.0,
        }
    }

    pub fn exit_arm(self, entry: Arm) -> Arm {
        let [hx, hy] = neg(entry.outward());
        let d = match self {
            Maneuver::Straight => [hx, hy],
            Maneuver::Left => [-hy, hx],
            Maneuver::Right => [hy, -hx],
        };
        Arm::from_outward(d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoadKind {
    /// East, west and south arms.
    ThreeWay,
    Intersection,
}

impl RoadKind {
    pub fn arms(self) -> &'static [Arm] {
        match self {
            RoadKind::ThreeWay => &[Arm::East, Arm::West, Arm::South],
            RoadKind::Intersection => &Arm::ALL,
        }
    }
}

fn neg(a: [f64; 2]) -> [f64; 2] {
    [-a[0], -a[1]]
}

fn right_normal(d: [f64; 2]) -> [f64; 2] {
    [d[1], -d[0]]
}

fn add(a: [f64; 2], b: [f64; 2], s: f64) -> [f64; 2] {
    [a[0] + s * b[0], a[1] + s * b[1]]
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arc {
    pub centre: [f64; 2],
    pub radius: f64,
    /// Polar angle of the arc start around `centre`.
    pub start_angle: f64,
    /// +1 counter-clockwise, −1 clockwise.
    pub sign: f64,
}

/// A lane-following path parameterized by arc length from `start`.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub start: [f64; 2],
    pub heading: f64,
    /// Length of the entry straight; infinite for straight maneuvers.
    pub entry_length: f64,
    pub arc: Option<Arc>,
}

impl Path {
    /// Path for `maneuver` from `entry`, starting `start_distance` before the
    /// junction centre on lane `lane` (0 nearest the road axis).
    pub fn new(
        entry: Arm,
        maneuver: Maneuver,
        lane: usize,
        lane_width: f64,
        start_distance: f64,
        turn_radius: f64,
    ) -> Result<Self, ScenarioError> {
        let d0 = neg(entry.outward());
        let offset = lane_width * (lane as f64 + 0.5);
        let lane_origin = add([0.0, 0.0], right_normal(d0), offset);
        let start = add(lane_origin, d0, -start_distance);
        let heading = entry.inbound_heading();
        if maneuver == Maneuver::Straight {
            return Ok(Self { start, heading, entry_length: f64::INFINITY, arc: None });
        }
        let d1 = maneuver.exit_arm(entry).outward();
        let exit_origin = add([0.0, 0.0], right_normal(d1), offset);
        // where the two lane centrelines cross, as a distance along d0
        let s_cross = dot(exit_origin, d0) - dot(lane_origin, d0);
        let entry_length = start_distance + s_cross - turn_radius;
        if entry_length < 0.0 {
            return Err(ScenarioError::Config(format!(
                "start distance {start_distance} m is too short for a {turn_radius} m turn"
            )));
        }
        let sign = maneuver.turn_sign();
        let arc_start = add(start, d0, entry_length);
        let left = [-d0[1], d0[0]];
        let centre = add(arc_start, left, sign * turn_radius);
        let start_angle = (arc_start[1] - centre[1]).atan2(arc_start[0] - centre[0]);
        Ok(Self { start, heading, entry_length, arc: Some(Arc { centre, radius: turn_radius, start_angle, sign }) })
    }

    /// Arc length up to the end of the turn.
    pub fn maneuver_length(&self) -> f64 {
        match self.arc {
            Some(a) => self.entry_length + a.radius * FRAC_PI_2,
            None => 0.0,
        }
    }

    /// Position and heading at arc length `s`.
    pub fn sample(&self, s: f64) -> ([f64; 2], f64) {
        let d0 = [self.heading.cos(), self.heading.sin()];
        let Some(arc) = self.arc else {
            return (add(self.start, d0, s), self.heading);
        };
        if s <= self.entry_length {
            return (add(self.start, d0, s), self.heading);
        }
        let along = s - self.entry_length;
        let sweep = along / arc.radius;
        if sweep <= FRAC_PI_2 {
            let phi = arc.start_angle + arc.sign * sweep;
            let p = [arc.centre[0] + arc.radius * phi.cos(), arc.centre[1] + arc.radius * phi.sin()];
            return (p, self.heading + arc.sign * sweep);
        }
        let phi = arc.start_angle + arc.sign * FRAC_PI_2;
        let end = [arc.centre[0] + arc.radius * phi.cos(), arc.centre[1] + arc.radius * phi.sin()];
        let h1 = self.heading + arc.sign * FRAC_PI_2;
        (add(end, [h1.cos(), h1.sin()], along - arc.radius * FRAC_PI_2), h1)
    }

    /// States `[p_x, p_y, θ, v]` at `τ = 1..=horizon`.
    pub fn reference(&self, speed: f64, tau_s: f64, horizon: usize) -> Result<Vec<DVector<f64>>, ScenarioError> {
        let travel = speed * tau_s * horizon as f64;
        if self.maneuver_length() > travel {
            return Err(ScenarioError::Config(format!(
                "maneuver needs {:.2} m but the horizon covers {travel:.2} m",
                self.maneuver_length()
            )));
        }
        Ok((1..=horizon)
            .map(|tau| {
                let (p, theta) = self.sample(speed * tau_s * tau as f64);
                DVector::from_column_slice(&[p[0], p[1], theta, speed])
            })
            .collect())
    }
}
