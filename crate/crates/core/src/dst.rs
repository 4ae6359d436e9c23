//! Dempster–Shafer primitives over small frames of discernment.
//!
//! Subsets are bit masks over at most [`MAX_FRAME_SIZE`] hypotheses, so every
//! quantity can be computed by enumerating focal elements directly.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{OcoError, Result};

pub const MAX_FRAME_SIZE: usize = 16;

/// Tolerance on the total mass.
pub const MASS_TOLERANCE: f64 = 1e-9;

/// Subset of the frame as a bit mask; bit `i` set means hypothesis `i` is included.
pub type Subset = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Frame {
    size: usize,
}

impl Frame {
    pub fn new(size: usize) -> Result<Self> {
        if size == 0 || size > MAX_FRAME_SIZE {
            return Err(OcoError::invalid(format!(
                "frame size must be in 1..={MAX_FRAME_SIZE}, got {size}"
            )));
        }
        Ok(Frame { size })
    }

    pub fn size(self) -> usize {
        self.size
    }

    /// The whole frame Ω.
    pub fn full(self) -> Subset {
        ((1u64 << self.size) - 1) as Subset
    }

    pub fn singleton(self, element: usize) -> Subset {
        assert!(
            element < self.size,
            "element {element} outside frame of size {}",
            self.size
        );
        1 << element
    }

    pub fn complement(self, a: Subset) -> Subset {
        self.full() & !a
    }

    pub fn contains_subset(self, a: Subset) -> bool {
        a & !self.full() == 0
    }

    /// All `2^n` subsets, ∅ first.
    pub fn subsets(self) -> impl Iterator<Item = Subset> {
        0..=self.full()
    }
}

/// Basic probability assignment; only focal elements are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct MassFunction {
    frame: Frame,
    masses: BTreeMap<Subset, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MassViolation {
    EmptySetMass(f64),
    NegativeMass {
        subset: Subset,
        mass: f64,
    },
    NonFinite {
        subset: Subset,
    },
    OutsideFrame {
        subset: Subset,
    },
    /// Total mass differs from 1; `deviation` is `total − 1`.
    Total {
        total: f64,
        deviation: f64,
    },
}

impl fmt::Display for MassViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MassViolation::EmptySetMass(m) => write!(f, "m(empty set) = {m}, must be 0"),
            MassViolation::NegativeMass { subset, mass } => {
                write!(f, "m({subset:#b}) = {mass} is negative")
            }
            MassViolation::NonFinite { subset } => write!(f, "m({subset:#b}) is not finite"),
            MassViolation::OutsideFrame { subset } => {
                write!(f, "subset {subset:#b} lies outside the frame")
            }
            MassViolation::Total { total, deviation } => {
                write!(
                    f,
                    "masses sum to {total} (deviation {deviation:e}), must be 1"
                )
            }
        }
    }
}

impl MassFunction {
    /// Builds a mass function; zero masses are dropped, repeated subsets accumulate.
    /// No axiom is checked here, see [`validate_mass`].
    pub fn from_masses(frame: Frame, masses: impl IntoIterator<Item = (Subset, f64)>) -> Self {
        let mut map = BTreeMap::new();
        for (a, m) in masses {
            if m != 0.0 {
                *map.entry(a).or_insert(0.0) += m;
            }
        }
        MassFunction { frame, masses: map }
    }

    /// All mass on Ω: total ignorance.
    pub fn vacuous(frame: Frame) -> Self {
        MassFunction::from_masses(frame, [(frame.full(), 1.0)])
    }

    /// Simple support function: `weight` on `focal`, the remainder on Ω.
    pub fn simple_support(frame: Frame, focal: Subset, weight: f64) -> Self {
        MassFunction::from_masses(frame, [(focal, weight), (frame.full(), 1.0 - weight)])
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn mass(&self, a: Subset) -> f64 {
        self.masses.get(&a).copied().unwrap_or(0.0)
    }

    pub fn focal_elements(&self) -> impl Iterator<Item = (Subset, f64)> + '_ {
        self.masses.iter().map(|(&a, &m)| (a, m))
    }
}

/// Checks `m(∅) = 0`, nonnegativity and `Σ m = 1`; reports every violation.
pub fn validate_mass(m: &MassFunction) -> std::result::Result<(), Vec<MassViolation>> {
    let mut violations = Vec::new();
    let mut total = 0.0;
    for (a, v) in m.focal_elements() {
        if !v.is_finite() {
            violations.push(MassViolation::NonFinite { subset: a });
            continue;
        }
        if !m.frame.contains_subset(a) {
            violations.push(MassViolation::OutsideFrame { subset: a });
        }
        if a == 0 {
            violations.push(MassViolation::EmptySetMass(v));
        }
        if v < 0.0 {
            violations.push(MassViolation::NegativeMass { subset: a, mass: v });
        }
        total += v;
    }
    if (total - 1.0).abs() > MASS_TOLERANCE {
        violations.push(MassViolation::Total {
            total,
            deviation: total - 1.0,
        });
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

fn require_valid(m: &MassFunction) -> Result<()> {
    validate_mass(m).map_err(|v| {
        let msgs: Vec<String> = v.iter().map(ToString::to_string).collect();
        OcoError::invalid(format!("invalid mass function: {}", msgs.join("; ")))
    })
}

/// `Bel(A) = Σ_{B ⊆ A} m(B)`.
pub fn belief(m: &MassFunction, a: Subset) -> Result<f64> {
    require_valid(m)?;
    Ok(m.focal_elements()
        .filter(|&(b, _)| b & !a == 0)
        .map(|(_, v)| v)
        .sum())
}

/// `Pl(A) = Σ_{B ∩ A ≠ ∅} m(B)`.
pub fn plausibility(m: &MassFunction, a: Subset) -> Result<f64> {
    require_valid(m)?;
    Ok(m.focal_elements()
        .filter(|&(b, _)| b & a != 0)
        .map(|(_, v)| v)
        .sum())
}

/// Mass assigned to ∅ before normalization when combining `m1` and `m2`.
pub fn conflict(m1: &MassFunction, m2: &MassFunction) -> f64 {
    let mut k = 0.0;
    for (b, x) in m1.focal_elements() {
        for (c, y) in m2.focal_elements() {
            if b & c == 0 {
                k += x * y;
            }
        }
    }
    k
}

/// Dempster's rule of combination.
pub fn dempster_combine(m1: &MassFunction, m2: &MassFunction) -> Result<MassFunction> {
    if m1.frame != m2.frame {
        return Err(OcoError::invalid(format!(
            "cannot combine masses over frames of size {} and {}",
            m1.frame.size, m2.frame.size
        )));
    }
    require_valid(m1)?;
    require_valid(m2)?;

    let mut joint: BTreeMap<Subset, f64> = BTreeMap::new();
    let mut conflicting = 0.0;
    for (b, x) in m1.focal_elements() {
        for (c, y) in m2.focal_elements() {
            let a = b & c;
            if a == 0 {
                conflicting += x * y;
            } else {
                *joint.entry(a).or_insert(0.0) += x * y;
            }
        }
    }
    let normalizer = 1.0 - conflicting;
    if joint.is_empty() || normalizer <= f64::EPSILON {
        return Err(OcoError::TotalConflict);
    }
    Ok(MassFunction {
        frame: m1.frame,
        masses: joint
            .into_iter()
            .map(|(a, v)| (a, v / normalizer))
            .collect(),
    })
}
