//! Vehicle kinematics to discrete driving actions.
//!
//! Speed and direction of travel come from the planar velocity components.
//! The wrapped deviation between direction of travel and heading separates
//! forward from reverse motion, and the yaw rate separates straight driving
//! from turning. Two thresholds drive the rule set:
//!
//! ```text
//! v < v_th                                   -> Stopped
//! v >= v_th and |dtheta| > pi/2              -> Reverse
//! v >= v_th and psi_dot >  omega_th          -> TurnLeft
//! v >= v_th and psi_dot < -omega_th          -> TurnRight
//! otherwise                                  -> Forward
//! ```
//!
//! Rules are evaluated top to bottom, so a reversing vehicle with a large yaw
//! rate is labelled `Reverse`.

mod kde;

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use kde::{estimate_thresholds, gaussian_kde_grid, silverman_bandwidth, valley_between_top_modes};

/// Number of classes in the modelling action set.
pub const NUM_CLASSES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActionLabel {
    Stopped,
    TurnLeft,
    TurnRight,
    Forward,
    Reverse,
}

impl ActionLabel {
    pub const ALL: [ActionLabel; 5] = [
        ActionLabel::Stopped,
        ActionLabel::TurnLeft,
        ActionLabel::TurnRight,
        ActionLabel::Forward,
        ActionLabel::Reverse,
    ];

    /// Modelling classes, indexed by [`ActionLabel::class_index`].
    pub const MODEL_CLASSES: [ActionLabel; NUM_CLASSES] =
        [ActionLabel::Forward, ActionLabel::TurnLeft, ActionLabel::TurnRight];

    /// Class index in the 3-class modelling set, `None` for Stopped/Reverse.
    pub fn class_index(self) -> Option<usize> {
        match self {
            ActionLabel::Forward => Some(0),
            ActionLabel::TurnLeft => Some(1),
            ActionLabel::TurnRight => Some(2),
            ActionLabel::Stopped | ActionLabel::Reverse => None,
        }
    }

    pub fn from_class_index(idx: usize) -> Option<ActionLabel> {
        Self::MODEL_CLASSES.get(idx).copied()
    }

    pub fn is_modelled(self) -> bool {
        self.class_index().is_some()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ActionLabel::Stopped => "stopped",
            ActionLabel::TurnLeft => "turn_left",
            ActionLabel::TurnRight => "turn_right",
            ActionLabel::Forward => "forward",
            ActionLabel::Reverse => "reverse",
        }
    }
}

impl fmt::Display for ActionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ActionLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ActionLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown action label `{s}`")))
    }
}

/// Stationary/moving and straight/turning decision boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// m/s
    pub v_th: f64,
    /// rad/s
    pub omega_th: f64,
}

impl Thresholds {
    pub const DEFAULT_V_TH: f64 = 0.5;
    pub const DEFAULT_OMEGA_TH: f64 = 0.05;

    pub fn new(v_th: f64, omega_th: f64) -> Result<Self> {
        let th = Thresholds { v_th, omega_th };
        th.validate()?;
        Ok(th)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v_th.is_finite() && self.v_th > 0.0) {
            return Err(Error::Config(format!("v_th must be > 0, got {}", self.v_th)));
        }
        if !(self.omega_th.is_finite() && self.omega_th > 0.0) {
            return Err(Error::Config(format!(
                "omega_th must be > 0, got {}",
                self.omega_th
            )));
        }
        Ok(())
    }
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            v_th: Self::DEFAULT_V_TH,
            omega_th: Self::DEFAULT_OMEGA_TH,
        }
    }
}

/// Timestamped planar velocities, heading and yaw rate.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicTrack {
    pub timestamps: Vec<f64>,
    pub vx: Vec<f64>,
    pub vy: Vec<f64>,
    pub psi: Vec<f64>,
    pub psi_dot: Vec<f64>,
}

impl KinematicTrack {
    pub fn new(
        timestamps: Vec<f64>,
        vx: Vec<f64>,
        vy: Vec<f64>,
        psi: Vec<f64>,
        psi_dot: Vec<f64>,
    ) -> Result<Self> {
        let track = KinematicTrack {
            timestamps,
            vx,
            vy,
            psi,
            psi_dot,
        };
        track.validate()?;
        Ok(track)
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.timestamps.len();
        if n < 2 {
            return Err(Error::InvalidInput(format!(
                "kinematic track needs at least 2 samples, got {n}"
            )));
        }
        for (name, col) in [
            ("vx", &self.vx),
            ("vy", &self.vy),
            ("psi", &self.psi),
            ("psi_dot", &self.psi_dot),
        ] {
            if col.len() != n {
                return Err(Error::InvalidInput(format!(
                    "column {name} has {} samples, timestamps have {n}",
                    col.len()
                )));
            }
            if let Some(i) = col.iter().position(|x| !x.is_finite()) {
                return Err(Error::InvalidInput(format!("non-finite {name} at sample {i}")));
            }
        }
        if let Some(i) = self.timestamps.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput(format!(
                "timestamps not strictly increasing at sample {}",
                i + 1
            )));
        }
        if let Some(i) = self.psi.iter().position(|&p| !(p > -PI && p <= PI)) {
            return Err(Error::InvalidInput(format!(
                "heading {} at sample {i} outside (-pi, pi]",
                self.psi[i]
            )));
        }
        Ok(())
    }

    /// Per-sample speed.
    pub fn speeds(&self) -> Vec<f64> {
        self.vx
            .iter()
            .zip(&self.vy)
            .map(|(&x, &y)| x.hypot(y))
            .collect()
    }
}

/// Per-sample action labels on some timeline.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSeries {
    pub timestamps: Vec<f64>,
    pub labels: Vec<ActionLabel>,
}

impl LabelSeries {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn finite(x: f64, what: &str) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::InvalidInput(format!("{what} is not finite: {x}")))
    }
}

pub fn speed(vx: f64, vy: f64) -> Result<f64> {
    Ok(finite(vx, "vx")?.hypot(finite(vy, "vy")?))
}

pub fn motion_direction(vx: f64, vy: f64) -> Result<f64> {
    let (vx, vy) = (finite(vx, "vx")?, finite(vy, "vy")?);
    if vx == 0.0 && vy == 0.0 {
        return Err(Error::UndefinedDirection);
    }
    let theta = vy.atan2(vx);
    // atan2 returns -pi for (negative x, -0.0)
    Ok(if theta == -PI { PI } else { theta })
}

/// Wraps an angle into the half-open interval (-pi, pi].
pub fn wrap_angle(a: f64) -> Result<f64> {
    let a = finite(a, "angle")?;
    if a > -PI && a <= PI {
        return Ok(a);
    }
    let r = (a + PI).rem_euclid(2.0 * PI) - PI;
    Ok(if r <= -PI { PI } else { r })
}

pub fn heading_deviation(theta_v: f64, psi: f64) -> Result<f64> {
    wrap_angle(theta_v - psi)
}

pub fn classify_sample(v: f64, psi_dot: f64, delta_theta: f64, th: &Thresholds) -> Result<ActionLabel> {
    th.validate()?;
    Ok(if v < th.v_th {
        ActionLabel::Stopped
    } else if delta_theta.abs() > PI / 2.0 {
        ActionLabel::Reverse
    } else if psi_dot > th.omega_th {
        ActionLabel::TurnLeft
    } else if psi_dot < -th.omega_th {
        ActionLabel::TurnRight
    } else {
        ActionLabel::Forward
    })
}

/// Labels a single kinematic sample, short-circuiting to `Stopped` before the
/// direction of travel is evaluated.
pub(crate) fn label_sample(vx: f64, vy: f64, psi: f64, psi_dot: f64, th: &Thresholds) -> Result<ActionLabel> {
    let v = speed(vx, vy)?;
    if v < th.v_th {
        return Ok(ActionLabel::Stopped);
    }
    let dtheta = heading_deviation(motion_direction(vx, vy)?, psi)?;
    classify_sample(v, psi_dot, dtheta, th)
}

/// Labels every sample of a track on the track's own timeline.
pub fn label_track(track: &KinematicTrack, th: &Thresholds) -> Result<LabelSeries> {
    track.validate()?;
    th.validate()?;
    let labels = (0..track.len())
        .map(|i| label_sample(track.vx[i], track.vy[i], track.psi[i], track.psi_dot[i], th))
        .collect::<Result<Vec<_>>>()?;
    Ok(LabelSeries {
        timestamps: track.timestamps.clone(),
        labels,
    })
}
