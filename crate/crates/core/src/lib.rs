pub mod dcpf;
pub mod network;
pub mod formulations;
pub mod cascade;
