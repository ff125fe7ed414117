//! Measurement ingestion, coordinate projection, dataset splitting and model
//! persistence.

mod csv;
mod geo;
mod model_file;
mod split;

pub use self::csv::{
    measurements_to_records, parse_measurements, parse_measurements_auto, parse_queries, to_measurements,
    write_measurements, CoordinateMode, DatasetManifest, Endpoints, RawRecord, Schema, ValueKind,
    DEFAULT_RX_HEIGHT_M, DEFAULT_TX_HEIGHT_M,
};
pub use self::geo::{geo_to_local, haversine_m, local_to_geo, GeoOrigin, EARTH_RADIUS_M};
pub use self::model_file::{
    decode_model, encode_model, load_model, save_model, stored_checksum, FORMAT_VERSION, MAGIC,
};
pub use self::split::{spatial_subsample, spatial_subsample_indices, split_dataset, split_indices, SplitStrategy};
