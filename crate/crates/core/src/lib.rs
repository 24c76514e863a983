pub mod bus;
pub mod controller;
pub mod sim;
pub mod telemetry;
pub mod protocol;
