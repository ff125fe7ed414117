//! Obstacle worlds with exact ground-truth path loss, label generators and
//! the built-in verification fixtures.

mod fixtures;
mod generate;
mod world;

pub use fixtures::{aniso_walls, indoor_9gw, link_fixture, urban_20, IndoorFixture, IndoorObservation, LinkFixture, FIXTURE_NAMES};
pub use generate::{generate_drive_test, generate_indoor_grid, label_links, IndoorGridSpec, RouteSpec};
pub use world::{oracle_label, oracle_path_loss, parse_world, write_world, Obstacle, ObstacleWorld, Shape};
