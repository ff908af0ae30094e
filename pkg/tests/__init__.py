# Tests package for the AS-CAL toolkit
