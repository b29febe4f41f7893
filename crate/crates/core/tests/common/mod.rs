#![allow(dead_code)]
pub mod criteria;
pub mod grad;
pub mod oracle;
