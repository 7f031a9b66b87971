pub mod datastore;
pub mod dsp;
pub mod encoder;
pub mod graph;
pub mod nn;
pub mod numerics;
pub mod sigsynth;
pub mod stfgcn;
pub mod training;
