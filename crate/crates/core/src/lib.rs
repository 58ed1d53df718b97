pub mod dynamics;
pub mod estimation;
pub mod kinematics;
pub mod sensors;
pub mod simulation;
pub mod config;
pub mod detection;
pub mod experiment;
