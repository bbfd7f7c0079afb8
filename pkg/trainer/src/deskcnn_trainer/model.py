"""The DeskCNN fixture architecture."""

import torch
import torch.nn as nn

# Per-channel normalization applied to [0,1] MNIST pixels before the first conv.
MNIST_MEAN = [0.1307]
MNIST_STD = [0.3081]


class DeskCNN(nn.Module):
    """Small BN-heavy CNN: three 3x3 conv stages (16, 32, 32 channels) and a
    10-way linear head. Input 1x28x28."""

    def __init__(self, num_classes=10):
        super().__init__()
        self.conv1 = nn.Conv2d(1, 16, 3, stride=1, padding=1)
        self.bn1 = nn.BatchNorm2d(16)
        self.conv2 = nn.Conv2d(16, 32, 3, stride=1, padding=1)
        self.bn2 = nn.BatchNorm2d(32)
        self.pool1 = nn.MaxPool2d(2, 2)
        self.conv3 = nn.Conv2d(32, 32, 3, stride=1, padding=1)
        self.bn3 = nn.BatchNorm2d(32)
        self.pool2 = nn.MaxPool2d(2, 2)
        self.fc = nn.Linear(32 * 7 * 7, num_classes)
        self.act = nn.ReLU()

    def forward(self, x):
        x = self.act(self.bn1(self.conv1(x)))
        x = self.pool1(self.act(self.bn2(self.conv2(x))))
        x = self.pool2(self.act(self.bn3(self.conv3(x))))
        return self.fc(x.flatten(1))

    # conv2/conv3 run on the multithreaded array; conv1 and fc stay exact.
    EXEMPT = ("conv1", "fc")
    PRUNABLE = ("conv2", "conv3")
