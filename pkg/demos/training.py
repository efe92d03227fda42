"""
Training the small CNN and the SVM
==================================

Gradient check first, then a short training run on synthetic beats, feature
extraction and a linear SVM on the extracted features.
"""
import numpy as np

from hbfuse import encode as enc
from hbfuse import neuralnet, svm
from hbfuse.synthetic import synth_split

# Backprop against central differences on an 8x8, 2-kernel network in float64
report = neuralnet.gradient_check()
print("gradient check max relative error %.2e" % report.max_rel_error)

split = synth_split(train_per_class=60, test_per_class=20, seed=3)
x_train = enc.encode_batch(split.train.samples, out_size=16)[:, :1]  # GAF channel
x_test = enc.encode_batch(split.test.samples, out_size=16)[:, :1]

arch = neuralnet.CnnArchitecture(input_size=16, conv_channels=(8, 16, 16), feature_width=64)
cfg = neuralnet.TrainConfig(epochs=8, mini_batch_size=32, seed=0)
model = neuralnet.train(x_train, split.train.labels, cfg, arch, progress=print)
print("CNN test accuracy", np.mean(model.predict(x_test) == split.test.labels))

# The 64-wide penultimate layer feeds a one-vs-rest linear SVM
f_train = neuralnet.extract_features(model, x_train)
f_test = neuralnet.extract_features(model, x_test)
clf = svm.svm_train(f_train, split.train.labels, lam=1e-4, epochs=20)
print("SVM on CNN features, test accuracy", np.mean(clf.predict(f_test) == split.test.labels))
