#![no_std]
extern crate alloc;

pub mod calendar;
pub mod canonical;
pub mod cashflow;
pub mod date;
pub mod event;
pub mod intstr;
pub mod money;
pub mod netting;
pub mod party;
pub mod rate;
pub mod settlement;
pub mod product;
pub mod template;
pub mod engine;
pub mod journal;
pub mod replica;
