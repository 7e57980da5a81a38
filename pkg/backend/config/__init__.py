# Configuration package: settings, topology files, forensic store engine
