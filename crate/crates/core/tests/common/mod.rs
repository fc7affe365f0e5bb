#![allow(dead_code)]

pub mod blocks;
pub mod oracles;
pub mod targets;
