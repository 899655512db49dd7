//! `blobs:n=60,c=3,m=3,noise=0/5/5` style descriptions of synthetic data.

use std::fmt;
use std::str::FromStr;

use gocn::datasets::{DataError, SynthBlobs};
use gocn::{Dataset, SeededRng};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub d: usize,
    pub c: usize,
    pub k: usize,
    pub spread: f64,
    pub scale: f64,
    pub noise: Vec<f64>,
    /// Seed of the generator, independent of the training seeds.
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        let b = SynthBlobs::default();
        Self {
            n: b.n,
            d: b.d,
            c: b.c,
            k: b.k,
            spread: b.spread,
            scale: b.scale,
            noise: b.noise,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn blobs(&self) -> SynthBlobs {
        SynthBlobs {
            n: self.n,
            d: self.d,
            c: self.c,
            k: self.k,
            spread: self.spread,
            scale: self.scale,
            noise: self.noise.clone(),
        }
    }

    pub fn generate(&self) -> Result<Dataset, DataError> {
        let mut ds = self.blobs().generate(&mut SeededRng::seed_from(self.seed))?;
        ds.name = self.to_string();
        Ok(ds)
    }
}

impl FromStr for SynthSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let body = s
            .strip_prefix("blobs")
            .ok_or_else(|| format!("unknown generator in {s:?}; expected blobs:key=value,..."))?;
        let body = match body.strip_prefix(':') {
            Some(rest) => rest,
            None if body.is_empty() => "",
            None => return Err(format!("expected ':' after blobs in {s:?}")),
        };
        let mut spec = SynthSpec::default();
        let mut m = None;
        let mut noise_given = false;
        for item in body.split(',').filter(|p| !p.is_empty()) {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| format!("expected key=value, got {item:?}"))?;
            let bad = |_| format!("invalid value {value:?} for {key}");
            match key {
                "n" => spec.n = value.parse().map_err(bad)?,
                "d" => spec.d = value.parse().map_err(bad)?,
                "c" => spec.c = value.parse().map_err(bad)?,
                "k" => spec.k = value.parse().map_err(bad)?,
                "m" => m = Some(value.parse::<usize>().map_err(bad)?),
                "seed" => spec.seed = value.parse().map_err(bad)?,
                "spread" => spec.spread = value.parse().map_err(|_| format!("invalid value {value:?} for {key}"))?,
                "scale" => spec.scale = value.parse().map_err(|_| format!("invalid value {value:?} for {key}"))?,
                "noise" => {
                    spec.noise = value
                        .split('/')
                        .map(|v| v.parse::<f64>().map_err(|_| format!("invalid noise level {v:?}")))
                        .collect::<Result<_, _>>()?;
                    noise_given = true;
                }
                other => return Err(format!("unknown synth key {other:?}")),
            }
        }
        if let Some(m) = m {
            if m == 0 {
                return Err("m must be at least 1".into());
            }
            if spec.noise.len() == 1 {
                spec.noise = vec![spec.noise[0]; m];
            } else if spec.noise.len() != m {
                return Err(format!("m = {m} but {} noise levels given", spec.noise.len()));
            }
        } else if !noise_given {
            spec.noise = vec![0.0];
        }
        Ok(spec)
    }
}

impl fmt::Display for SynthSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let noise: Vec<String> = self.noise.iter().map(|v| format!("{v:?}")).collect();
        write!(
            f,
            "blobs:n={},d={},c={},k={},m={},noise={},spread={:?},scale={:?},seed={}",
            self.n,
            self.d,
            self.c,
            self.k,
            self.noise.len(),
            noise.join("/"),
            self.spread,
            self.scale,
            self.seed
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_short_form() {
        let s: SynthSpec = "blobs:n=60,c=3,m=1,noise=0".parse().unwrap();
        assert_eq!((s.n, s.c, s.noise.clone()), (60, 3, vec![0.0]));
        let s: SynthSpec = "blobs:m=3,noise=0/5/5".parse().unwrap();
        assert_eq!(s.noise, vec![0.0, 5.0, 5.0]);
        let s: SynthSpec = "blobs:m=3".parse().unwrap();
        assert_eq!(s.noise, vec![0.0; 3]);
        assert_eq!("blobs".parse::<SynthSpec>().unwrap(), SynthSpec::default());
    }

    #[test]
    fn rejects_malformed_specs() {
        for bad in ["grid:n=4", "blobs:n=x", "blobs:m=2,noise=0/1/2", "blobs:q=1", "blobs:n", "blobs:m=0"] {
            assert!(bad.parse::<SynthSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn display_round_trips() {
        let s: SynthSpec = "blobs:n=30,c=3,m=3,noise=0/2.5/5,scale=0.02,seed=7".parse().unwrap();
        assert_eq!(s.to_string().parse::<SynthSpec>().unwrap(), s);
    }
}
