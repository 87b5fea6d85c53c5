"""Version configuration for the cvqkd package."""

# Package version - this should match the published version
PACKAGE_VERSION = "0.1.0"

# Output schema version - bumped whenever CSV/JSON layouts change
OUTPUT_SCHEMA_VERSION = "1.0"
