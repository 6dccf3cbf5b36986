import mocklib as ml

x = ml.Input(4)
x = ml.LeakyReLU(alpha=0.3)(x)
x = ml.Conv2d(8, padding_mode='zeros')(x)
x = ml.LSTM(16)(x)
y = ml.Output(2)(x)
ml.fit(x, y, epochs=1)
