//! Vegetation and snow index formulas over Sentinel-2 band maps.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Indices this module can derive from raw bands.
pub const INDEX_NAMES: [&str; 6] = ["NDVI", "GNDVI", "NDRE", "SAVI", "EVI", "NDSI"];

const DENOM_FLOOR: f64 = 1e-9;

fn band(bands: &BTreeMap<String, f64>, name: &str) -> Result<f64> {
    bands
        .get(name)
        .copied()
        .ok_or_else(|| Error::Data(format!("missing band {name}")))
}

fn ratio(num: f64, denom: f64, what: &str) -> Result<f64> {
    if denom.abs() < DENOM_FLOOR {
        return Err(Error::Data(format!("{what} denominator too close to zero")));
    }
    Ok(num / denom)
}

/// Computes a named index.
///
/// NDVI = (B8-B4)/(B8+B4); GNDVI = (B8-B3)/(B8+B3); NDRE = (B8-B5)/(B8+B5);
/// SAVI = 1.5 (B8-B4)/(B8+B4+0.5); EVI = 2.5 (B8-B4)/(B8+6 B4-7.5 B2+1);
/// NDSI = (B3-B11)/(B3+B11).
pub fn compute_index(name: &str, bands: &BTreeMap<String, f64>) -> Result<f64> {
    match name {
        "NDVI" => {
            let (nir, red) = (band(bands, "B8")?, band(bands, "B4")?);
            ratio(nir - red, nir + red, "NDVI")
        }
        "GNDVI" => {
            let (nir, green) = (band(bands, "B8")?, band(bands, "B3")?);
            ratio(nir - green, nir + green, "GNDVI")
        }
        "NDRE" => {
            let (nir, red_edge) = (band(bands, "B8")?, band(bands, "B5")?);
            ratio(nir - red_edge, nir + red_edge, "NDRE")
        }
        "SAVI" => {
            let (nir, red) = (band(bands, "B8")?, band(bands, "B4")?);
            ratio(1.5 * (nir - red), nir + red + 0.5, "SAVI")
        }
        "EVI" => {
            let (nir, red, blue) = (
                band(bands, "B8")?,
                band(bands, "B4")?,
                band(bands, "B2")?,
            );
            ratio(2.5 * (nir - red), nir + 6.0 * red - 7.5 * blue + 1.0, "EVI")
        }
        "NDSI" => {
            let (green, swir) = (band(bands, "B3")?, band(bands, "B11")?);
            ratio(green - swir, green + swir, "NDSI")
        }
        other => Err(Error::Data(format!("unknown index {other}"))),
    }
}
