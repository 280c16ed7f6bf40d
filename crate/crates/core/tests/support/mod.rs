#![allow(dead_code)]

pub mod protocol;
