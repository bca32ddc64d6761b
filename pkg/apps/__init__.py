# Project apps for the volumetric defacing toolkit.
