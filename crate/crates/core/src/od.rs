use crate::error::{Error, Result};

/// Dense square origin-destination matrix over zones, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct OdMatrix {
    zones: usize,
    values: Vec<f64>,
}

impl OdMatrix {
    pub fn zeros(zones: usize) -> Self {
        Self {
            zones,
            values: vec![0.0; zones * zones],
        }
    }

    pub fn from_vec(zones: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != zones * zones {
            return Err(Error::ShapeMismatch(format!(
                "OD matrix of {zones} zones needs {} entries, got {}",
                zones * zones,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::Validation(format!(
                "demand must be finite and nonnegative, got {v}"
            )));
        }
        Ok(Self { zones, values })
    }

    pub fn zones(&self) -> usize {
        self.zones
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.zones + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.zones + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.zones..(i + 1) * self.zones]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            zones: self.zones,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }
}
