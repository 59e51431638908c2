//! Instantaneous CO2 and fuel rates as clamped polynomials in speed and acceleration.

use std::fmt::Write as _;

use crate::error::MetricsError;

pub const DEFAULT_COEFFS: &str = include_str!("../../data/emission_coeffs.txt");

#[derive(Debug, Clone, PartialEq)]
pub struct EmissionClassCoeffs {
    pub class: String,
    /// mg/s coefficients for 1, v, v², v³, v·a, v·a².
    pub co2: [f64; 6],
    /// ml/s coefficients, same layout.
    pub fuel: [f64; 6],
}

/// `max(0, c0 + c1 v + c2 v² + c3 v³ + c4 v a + c5 v a²)`.
#[inline]
pub fn polynomial_rate(c: &[f64; 6], v: f64, a: f64) -> f64 {
    let raw = c[0] + v * (c[1] + v * (c[2] + v * c[3])) + v * a * (c[4] + c[5] * a);
    raw.max(0.0)
}

/// CO2 rate in mg/s.
pub fn emission_rate(coeffs: &EmissionClassCoeffs, v: f64, a: f64) -> f64 {
    polynomial_rate(&coeffs.co2, v, a)
}

/// Fuel rate in ml/s.
pub fn fuel_rate(coeffs: &EmissionClassCoeffs, v: f64, a: f64) -> f64 {
    polynomial_rate(&coeffs.fuel, v, a)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmissionTable {
    classes: Vec<EmissionClassCoeffs>,
}

impl Default for EmissionTable {
    fn default() -> Self {
        EmissionTable::parse(DEFAULT_COEFFS).expect("bundled coefficients parse")
    }
}

impl EmissionTable {
    /// Parses `class c0..c5 f0..f5` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, MetricsError> {
        let mut classes = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 13 {
                return Err(MetricsError::Parse {
                    line: idx + 1,
                    msg: format!("expected class name and 12 coefficients, got {} fields", fields.len()),
                });
            }
            let mut vals = [0.0; 12];
            for (k, f) in fields[1..].iter().enumerate() {
                vals[k] = f.parse().map_err(|_| MetricsError::Parse {
                    line: idx + 1,
                    msg: format!("cannot parse coefficient `{f}`"),
                })?;
            }
            let mut co2 = [0.0; 6];
            let mut fuel = [0.0; 6];
            co2.copy_from_slice(&vals[..6]);
            fuel.copy_from_slice(&vals[6..]);
            if co2[0] < 0.0 || fuel[0] < 0.0 {
                return Err(MetricsError::Parse {
                    line: idx + 1,
                    msg: "idle rate must be non-negative".into(),
                });
            }
            classes.push(EmissionClassCoeffs {
                class: fields[0].to_string(),
                co2,
                fuel,
            });
        }
        Ok(EmissionTable { classes })
    }

    pub fn get(&self, class: &str) -> Result<&EmissionClassCoeffs, MetricsError> {
        self.classes
            .iter()
            .find(|c| c.class == class)
            .ok_or_else(|| MetricsError::UnknownClass(class.to_string()))
    }

    pub fn classes(&self) -> &[EmissionClassCoeffs] {
        &self.classes
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# class co2[c0..c5] fuel[c0..c5]\n");
        for c in &self.classes {
            let _ = write!(out, "{}", c.class);
            for v in c.co2.iter().chain(c.fuel.iter()) {
                let _ = write!(out, " {v}");
            }
            out.push('\n');
        }
        out
    }
}
