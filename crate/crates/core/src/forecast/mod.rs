pub mod exact;
pub mod fast;
