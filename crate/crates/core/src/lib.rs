//! Signal-line RC current response by dynamic capacitance matching.
//!
//! Pipeline: [`netlist`] parses and stamps the RC net, [`mor`] reduces its
//! port admittance to pole/residue form, [`driverlib`] holds fixed-load
//! driver characterizations, [`response`] evaluates the RC current for a
//! piecewise-linear port voltage in closed form, and [`dcm`] matches the
//! per-step effective capacitance. [`oracle`] is the reference transient
//! simulator and [`suite`] the benchmark harness.

pub mod dcm;
pub mod driverlib;
pub mod mor;
pub mod netlist;
pub mod oracle;
pub mod response;
pub mod sparse;
pub mod suite;
