//! Equirectangular tangent-plane projection between geodetic coordinates and
//! the local metric frame used by the model.
//!
//! Accurate to well under 0.5 % in pairwise distance for extents up to a few
//! tens of kilometers, which covers drive-test campaigns.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point3;

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Geodetic anchor of a local frame (degrees).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoOrigin {
    pub lat: f64,
    pub lon: f64,
}

impl GeoOrigin {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        check_lat_lon(lat, lon)?;
        Ok(Self { lat, lon })
    }
}

pub fn check_lat_lon(lat: f64, lon: f64) -> Result<()> {
    if !(lat.is_finite() && (-90.0..=90.0).contains(&lat)) {
        return Err(Error::invalid(format!("latitude {lat} outside [-90, 90]")));
    }
    if !(lon.is_finite() && (-180.0..=180.0).contains(&lon)) {
        return Err(Error::invalid(format!("longitude {lon} outside [-180, 180]")));
    }
    Ok(())
}

pub fn geo_to_local(lat: f64, lon: f64, alt: f64, origin: &GeoOrigin) -> Result<Point3> {
    check_lat_lon(lat, lon)?;
    if !alt.is_finite() {
        return Err(Error::invalid(format!("altitude {alt} is not finite")));
    }
    let x = EARTH_RADIUS_M * origin.lat.to_radians().cos() * (lon - origin.lon).to_radians();
    let y = EARTH_RADIUS_M * (lat - origin.lat).to_radians();
    Ok(Point3::new(x, y, alt))
}

/// Inverse of [`geo_to_local`]: `(lat, lon, alt)`.
pub fn local_to_geo(p: Point3, origin: &GeoOrigin) -> (f64, f64, f64) {
    let lat = origin.lat + (p.y / EARTH_RADIUS_M).to_degrees();
    let lon = origin.lon + (p.x / (EARTH_RADIUS_M * origin.lat.to_radians().cos())).to_degrees();
    (lat, lon, p.z)
}

/// Great-circle (haversine) distance in meters.
pub fn haversine_m(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * a.sqrt().asin()
}
