from rest_framework import routers

from .views import ExperimentViewSet, TreeViewSet, MatchViewSet

router = routers.DefaultRouter()
router.register(r'experiments', ExperimentViewSet)
router.register(r'tree', TreeViewSet, basename='tree')
router.register(r'match', MatchViewSet, basename='match')

urlpatterns = router.urls
