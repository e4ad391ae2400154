//! Render settings from flags, environment variables and request bodies.

use clap::Args;
use serde::{Deserialize, Serialize};
use splat4d::render::RenderSettings;

/// Default render settings. Every flag falls back to an environment variable.
#[derive(Debug, Clone, Args)]
pub struct SettingsArgs {
    #[arg(long, env = "SPLAT4D_TILE_SIZE")]
    pub tile_size: Option<u32>,
    #[arg(long, env = "SPLAT4D_ALPHA_THRESHOLD")]
    pub alpha_threshold: Option<f64>,
    #[arg(long, env = "SPLAT4D_SATURATION_THRESHOLD")]
    pub saturation_threshold: Option<f64>,
    #[arg(long, env = "SPLAT4D_NEAR_CLIP")]
    pub near_clip: Option<f64>,
    #[arg(long, env = "SPLAT4D_FAR_CLIP")]
    pub far_clip: Option<f64>,
    #[arg(long, env = "SPLAT4D_GAUSSIAN_EXTENT")]
    pub gaussian_extent: Option<f64>,
    #[arg(long, env = "SPLAT4D_COVARIANCE_FLOOR")]
    pub covariance_floor: Option<f64>,
    #[arg(long, env = "SPLAT4D_FRUSTUM_GUARD")]
    pub frustum_guard: Option<f64>,
}

impl SettingsArgs {
    pub fn overrides(&self) -> SettingsOverrides {
        SettingsOverrides {
            tile_size: self.tile_size,
            alpha_threshold: self.alpha_threshold,
            saturation_threshold: self.saturation_threshold,
            near_clip: self.near_clip,
            far_clip: self.far_clip,
            gaussian_extent: self.gaussian_extent,
            covariance_floor: self.covariance_floor,
            frustum_guard: self.frustum_guard,
        }
    }
}

/// Partial settings; absent fields keep the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SettingsOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tile_size: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub saturation_threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub near_clip: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub far_clip: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaussian_extent: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance_floor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frustum_guard: Option<f64>,
}

impl SettingsOverrides {
    pub fn apply(&self, base: &RenderSettings) -> RenderSettings {
        RenderSettings {
            tile_size: self.tile_size.unwrap_or(base.tile_size),
            alpha_threshold: self.alpha_threshold.unwrap_or(base.alpha_threshold),
            saturation_threshold: self.saturation_threshold.unwrap_or(base.saturation_threshold),
            near_clip: self.near_clip.unwrap_or(base.near_clip),
            far_clip: self.far_clip.unwrap_or(base.far_clip),
            gaussian_extent: self.gaussian_extent.unwrap_or(base.gaussian_extent),
            covariance_floor: self.covariance_floor.unwrap_or(base.covariance_floor),
            frustum_guard: self.frustum_guard.unwrap_or(base.frustum_guard),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn absent_fields_keep_base() {
        let base = RenderSettings::default();
        assert_eq!(SettingsOverrides::default().apply(&base), base);
        let o: SettingsOverrides = serde_json::from_str(r#"{"tile_size": 8}"#).unwrap();
        assert_eq!(o.apply(&base).tile_size, 8);
        assert_eq!(o.apply(&base).near_clip, base.near_clip);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<SettingsOverrides>(r#"{"tile": 8}"#).is_err());
    }
}
