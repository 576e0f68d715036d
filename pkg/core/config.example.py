# Пример конфигурационного файла для Video Pointing Toolkit
# Скопируйте этот файл в config.py (в корень проекта) и настройте под свои нужды.
# Переменные окружения VPT_* и .env имеют приоритет над этим файлом.

# Настройки логирования
LOG_LEVEL = "INFO"  # DEBUG, INFO, WARNING, ERROR

# Каталог для результатов команд (runs/<команда> по умолчанию)
OUTPUT_ROOT = "runs"

# Слияние масок
K = 5                      # Шаг ключевых кадров
TAU = 0.7                  # Порог IoU для пересечения
STRATEGY = "bidirectional" # bidirectional, prefer-left, prefer-right, intersection, larger, smaller

# Временной модуль: число предыдущих кадров в контексте
CONTEXT_LENGTH = 4

# Аннотация: число кандидатов на (кадр, объект)
CANDIDATES = 5

# Общий seed для всех команд
SEED = 0

# Число потоков бенчмарка (по умолчанию: физические ядра)
# WORKERS = 4
