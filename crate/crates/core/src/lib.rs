pub mod auth;
pub mod model;
pub mod o2;
pub mod scheduler;
pub mod sim;
pub mod site;
pub mod smo;
