//! Placeholder for the property suites.
