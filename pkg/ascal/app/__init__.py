# AS-CAL toolkit package
