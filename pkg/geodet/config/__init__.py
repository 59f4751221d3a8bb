# Configuration Management Package
