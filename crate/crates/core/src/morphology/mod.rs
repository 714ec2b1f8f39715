//! Tumour regions: connected components, topology, convex hull and the
//! per-region shape/intensity descriptors fed to the classifier and the
//! survival models.

mod components;
mod descriptors;
mod hull;
mod topology;

pub use components::{connected_components, Connectivity, LabelMap};
pub use descriptors::{
    patient_feature_vector, region_descriptors, region_descriptors_from_voxels,
    read_feature_csv, select_calibrated_features, write_feature_csv, FeatureRow, PatientFeatureVector, RegionFeatures,
    CALIBRATED_FEATURE_NAMES,
};
pub use hull::{convex_hull, convex_hull_mask, ConvexHull, Plane};
pub use topology::{euler_number, fill_holes};
