use std::path::Path;

use lumitex_geometry::Vec3;
use serde::{Deserialize, Serialize};

use crate::error::{RelightError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionalLight {
    /// Unit vector from the surface toward the light.
    pub direction: [f64; 3],
    pub radiance: [f64; 3],
}

/// JSON: `{"name": .., "lights": [{"direction": [x,y,z], "radiance":
/// [r,g,b]}], "ambient": [r,g,b]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LightRig {
    #[serde(default)]
    pub name: String,
    pub lights: Vec<DirectionalLight>,
    pub ambient: [f64; 3],
}

impl LightRig {
    pub fn validate(&self) -> Result<()> {
        for (i, l) in self.lights.iter().enumerate() {
            let len = Vec3::from(l.direction).length();
            if (len - 1.0).abs() > 1e-9 {
                return Err(RelightError::InvalidRig(format!("light {i} direction has length {len}")));
            }
            if l.radiance.iter().any(|&r| !(r >= 0.0 && r.is_finite())) {
                return Err(RelightError::InvalidRig(format!("light {i} radiance {:?} must be finite and >= 0", l.radiance)));
            }
        }
        if self.ambient.iter().any(|&a| !(a >= 0.0 && a.is_finite())) {
            return Err(RelightError::InvalidRig(format!("ambient {:?} must be finite and >= 0", self.ambient)));
        }
        Ok(())
    }

    /// Every light's radiance (and the ambient term) multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            name: self.name.clone(),
            lights: self
                .lights
                .iter()
                .map(|l| DirectionalLight {
                    direction: l.direction,
                    radiance: l.radiance.map(|r| r * k),
                })
                .collect(),
            ambient: self.ambient.map(|a| a * k),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| RelightError::Io {
            path: path.into(),
            source,
        })?;
        let rig: LightRig = serde_json::from_str(&text)?;
        rig.validate()?;
        Ok(rig)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|source| RelightError::Io {
            path: path.into(),
            source,
        })
    }
}

fn light(dir: [f64; 3], radiance: [f64; 3]) -> DirectionalLight {
    DirectionalLight {
        direction: Vec3::from(dir).normalized().to_array(),
        radiance,
    }
}

/// Three fixed rigs standing in for environment maps: a neutral key/fill
/// studio, a warm low sun with cool sky fill, and a soft overhead overcast.
pub fn preset_rigs() -> Vec<LightRig> {
    vec![
        LightRig {
            name: "studio".into(),
            lights: vec![light([0.5, 0.7, 0.8], [2.2, 2.2, 2.2]), light([-0.7, 0.2, 0.4], [0.8, 0.8, 0.85])],
            ambient: [0.12, 0.12, 0.12],
        },
        LightRig {
            name: "sunset".into(),
            lights: vec![light([-0.8, 0.35, 0.5], [2.6, 1.7, 1.0]), light([0.3, 0.9, -0.3], [0.4, 0.55, 0.9])],
            ambient: [0.08, 0.09, 0.13],
        },
        LightRig {
            name: "overcast".into(),
            lights: vec![
                light([0.0, 1.0, 0.0], [1.1, 1.1, 1.15]),
                light([0.6, 0.4, -0.7], [0.6, 0.6, 0.62]),
                light([-0.4, 0.3, 0.9], [0.6, 0.6, 0.62]),
            ],
            ambient: [0.2, 0.2, 0.21],
        },
    ]
}
