# Training, augmentation and evaluation services package
