//! Traffic demand configuration for an episode.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layout::{Approach, Turn};
use crate::{Error, Result};

/// One value per approach, in `Approach::ALL` order when iterated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerApproach<T> {
    pub north: T,
    pub east: T,
    pub south: T,
    pub west: T,
}

impl<T: Copy> PerApproach<T> {
    pub fn uniform(v: T) -> Self {
        PerApproach { north: v, east: v, south: v, west: v }
    }

    /// Major road (east/west) gets `major`, minor road gets `minor`.
    pub fn by_road(major: T, minor: T) -> Self {
        PerApproach { north: minor, east: major, south: minor, west: major }
    }

    pub fn get(&self, a: Approach) -> T {
        match a {
            Approach::North => self.north,
            Approach::East => self.east,
            Approach::South => self.south,
            Approach::West => self.west,
        }
    }
}

/// Turn choice probabilities for one approach.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurnDist {
    pub left: f64,
    pub straight: f64,
    pub right: f64,
}

impl Default for TurnDist {
    fn default() -> Self {
        TurnDist { left: 0.25, straight: 0.5, right: 0.25 }
    }
}

impl TurnDist {
    pub fn sum(&self) -> f64 {
        self.left + self.straight + self.right
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Turn {
        let u: f64 = rng.gen::<f64>() * self.sum();
        if u < self.left {
            Turn::Left
        } else if u < self.left + self.straight {
            Turn::Straight
        } else {
            Turn::Right
        }
    }
}

/// Demand and fleet-mix description of one traffic scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// Mean spawn rate per approach in vehicles per second.
    pub demand: PerApproach<f64>,
    /// Turn mix per approach.
    pub turns: PerApproach<TurnDist>,
    /// Probability that a spawned vehicle is automated.
    pub automation_level: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig::demand_level(1)
    }
}

/// Major-road spawn rates (veh/s) for demand levels 1..=5; the minor road
/// runs at half the major rate.
const DEMAND_MAJOR: [f64; 5] = [0.14, 0.17, 0.20, 0.23, 0.26];

impl ScenarioConfig {
    /// Preset demand level `1..=5`, ordered from light to heavy traffic.
    pub fn demand_level(level: usize) -> Self {
        assert!((1..=5).contains(&level), "demand level must be 1..=5");
        let major = DEMAND_MAJOR[level - 1];
        ScenarioConfig {
            demand: PerApproach::by_road(major, major / 2.0),
            turns: PerApproach::uniform(TurnDist::default()),
            automation_level: 0.5,
        }
    }

    pub fn with_automation(mut self, level: f64) -> Self {
        self.automation_level = level;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for a in Approach::ALL {
            let d = self.demand.get(a);
            if !(0.0..=2.0).contains(&d) {
                return Err(Error::input(format!("demand for {} out of range: {d}", a.label())));
            }
            let t = self.turns.get(a);
            if t.left < 0.0 || t.straight < 0.0 || t.right < 0.0 || t.sum() <= 0.0 {
                return Err(Error::input(format!("invalid turn distribution for {}", a.label())));
            }
        }
        if !(0.0..=1.0).contains(&self.automation_level) {
            return Err(Error::input(format!(
                "automation level must lie in [0, 1], got {}",
                self.automation_level
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn presets_are_valid_and_ordered() {
        let mut last = 0.0;
        for level in 1..=5 {
            let s = ScenarioConfig::demand_level(level);
            s.validate().unwrap();
            assert!(s.demand.get(Approach::East) > last);
            last = s.demand.get(Approach::East);
            assert!(s.demand.get(Approach::North) < s.demand.get(Approach::East));
        }
    }

    #[test]
    fn turn_sampling_matches_probabilities() {
        let dist = TurnDist { left: 0.2, straight: 0.6, right: 0.2 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counts = [0usize; 3];
        let n = 20_000;
        for _ in 0..n {
            counts[dist.sample(&mut rng).index()] += 1;
        }
        assert!((counts[0] as f64 / n as f64 - 0.2).abs() < 0.02);
        assert!((counts[1] as f64 / n as f64 - 0.6).abs() < 0.02);
        assert!((counts[2] as f64 / n as f64 - 0.2).abs() < 0.02);
    }

    #[test]
    fn validation_rejects_bad_values() {
        let mut s = ScenarioConfig::default();
        s.automation_level = 1.5;
        assert!(s.validate().is_err());
        let mut s = ScenarioConfig::default();
        s.demand.east = -0.1;
        assert!(s.validate().is_err());
    }
}
