pub mod autodiff;
pub mod blob;
pub mod cli;
pub mod export;
pub mod mesh;
pub mod model;
pub mod noise;
pub mod oracle;
pub mod trainer;
