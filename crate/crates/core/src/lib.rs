//! Fault mitigation for a string of ACC vehicles.
//!
//! A lead, a following and a trailing vehicle drive under constant time-gap
//! ACC. When the following vehicle suffers a severe fault its safety channel
//! takes over: a tactical state machine picks brake-in-lane or
//! brake-out-of-lane, a quintic reference moves it to the road shoulder and a
//! nonlinear MPC, optionally reconfigured with the diagnosed fault, tracks that
//! reference until the vehicle is parked.

pub mod acc;
pub mod dynamics;
pub mod ocp;
pub mod qp;
pub mod scenario;
pub mod tdm;
pub mod trajectory;
