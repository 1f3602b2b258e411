import os


# SECURITY WARNING: don't run with debug turned on in production!
DEBUG = os.environ.get("DEBUGGING") == "DEBUG"

# Database
# https://docs.djangoproject.com/en/4.2/ref/settings/#databases
BASE_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if os.environ.get("DB_ENGINE") == "postgres":
    DATABASES = {
        'default': {
            'ENGINE': 'django.db.backends.postgresql_psycopg2',
            'NAME': os.environ.get("DB_NAME", 'db_fedmint'),
            'USER': os.environ.get("DB_USER", 'admin'),
            'PASSWORD': os.environ.get("DB_PASSWORD", 'admin'),
            'HOST': os.environ.get("DB_HOST", 'db'),  # same as the docker-compose service
            'PORT': int(os.environ.get("DB_PORT", 5432)),
        }
    }
else:
    DATABASES = {
        'default': {
            'ENGINE': 'django.db.backends.sqlite3',
            'NAME': os.path.join(BASE_DIR, os.environ.get("DB_NAME", 'db.sqlite3')),
        }
    }

# Allowed Hosts
ALLOWED_HOSTS = os.environ.get('HOST', "localhost,127.0.0.1,testserver").split(",")

# For pagination requests
DEFAULT_PAGINATION_SIZE = 50

# Upper bound of page size a client may ask for
MAX_PAGINATION_SIZE = 500

# Remote trainer service (ex: "http://127.0.0.1:9000/"), used by RemoteTrainer only
TRAINER_ADDRESS = os.environ.get("TRAINER_ADDRESS", "http://127.0.0.1:9000/")

# Seconds to wait for the remote trainer before giving up
TRAINER_TIMEOUT = float(os.environ.get("TRAINER_TIMEOUT", 30))

# Logging config
# you should get the logger like this whenever you need it: logging.getLogger(__name__)
LOG_LEVEL = os.environ.get('LOG_LEVEL', 'INFO')
LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '[%(asctime)s] %(levelname)-8s [%(module)s:%(funcName)s:%(lineno)d]: %(message)s',
            'datefmt': '%Y-%m-%d %H:%M:%S',
        },
    },
    'handlers': {
        'console': {
            'level': LOG_LEVEL,
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
        'file': {
            'level': 'ERROR',
            'class': 'logging.FileHandler',
            'formatter': 'verbose',
            'filename': os.path.join(BASE_DIR, '.important.log')
        },
    },
    'loggers': {
        'core': {
            'handlers': ['console', 'file'],
            'propagate': True,
            'level': LOG_LEVEL,
        }
    }
}

# set your approprate broker url, e.g, rabbitmq or redis
CELERY_BROKER_URL = os.environ.get("BROKER_URL")
# without a broker experiments submitted through the api run in process
CELERY_TASK_ALWAYS_EAGER = CELERY_BROKER_URL is None
CELERY_TASK_EAGER_PROPAGATES = False
